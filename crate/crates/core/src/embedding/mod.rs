//! Initial/delayed attractor pairs and their anti-diagonal structure.
//!
//! The initial attractor `O` is an M×N matrix: N spatial variables observed
//! at M sample times. The delayed attractor `D` is the L×M delay-coordinate
//! matrix of one target variable, `D[i][m] = x_k(t_{m+i-1})` (1-based), so
//! every anti-diagonal of `D` holds a single time instant. Cells whose time
//! index exceeds M are the forecasts.

mod ami;

pub use ami::{average_mutual_information, select_delay_ami, AmiSelection, DelayMethod, AMI_PLATEAU_TOL, DEFAULT_AMI_BINS};

use serde::{Deserialize, Serialize};

use crate::diffengine::{anti_diagonal_variance, Matrix};
use crate::error::{Error, Result};

/// M×N matrix of spatial variables (columns) at consecutive sample times (rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialAttractor {
    data: Matrix,
    k_index: usize,
}

impl InitialAttractor {
    pub fn new(data: Matrix, k_index: usize) -> Result<Self> {
        if k_index >= data.cols() {
            return Err(Error::Dimension(format!(
                "target column {k_index} outside {} variables",
                data.cols()
            )));
        }
        if !data.is_finite() {
            return Err(Error::Format("initial attractor has non-finite entries".into()));
        }
        Ok(Self { data, k_index })
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    /// Column of the target variable.
    pub fn k_index(&self) -> usize {
        self.k_index
    }

    /// Number of sample times (M).
    pub fn samples(&self) -> usize {
        self.data.rows()
    }

    /// Number of spatial variables (N).
    pub fn variables(&self) -> usize {
        self.data.cols()
    }

    pub fn target_series(&self) -> Vec<f64> {
        self.data.column(self.k_index)
    }
}

/// L×M delay-coordinate matrix of the target variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayedAttractor {
    data: Matrix,
}

impl DelayedAttractor {
    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix {
        self.data
    }

    pub fn samples(&self) -> usize {
        self.data.cols()
    }

    pub fn delays(&self) -> usize {
        self.data.rows()
    }
}

/// Builds `D` from a series covering `t_1..t_{M+L-1}`.
pub fn build_delayed_attractor(series: &[f64], m: usize, l: usize) -> Result<DelayedAttractor> {
    if m == 0 || l == 0 {
        return Err(Error::Dimension(format!("M and L must be positive (M={m}, L={l})")));
    }
    let needed = m + l - 1;
    if series.len() < needed {
        return Err(Error::Length {
            needed,
            have: series.len(),
        });
    }
    Ok(DelayedAttractor {
        data: Matrix::from_fn(l, m, |i, j| series[i + j]),
    })
}

/// Partition of the L·M cells of a delayed attractor by time index.
///
/// Cells are flat row-major indices `i·M + m` (0-based). Groups are ordered by
/// ascending time, cells within a group by ascending row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiagonalIndex {
    m: usize,
    l: usize,
    groups: Vec<Vec<usize>>,
    known_count: usize,
}

impl DiagonalIndex {
    pub fn new(m: usize, l: usize) -> Self {
        let n_groups = (m + l).saturating_sub(1);
        let mut groups = vec![Vec::new(); n_groups];
        for i in 0..l {
            for j in 0..m {
                groups[i + j].push(i * m + j);
            }
        }
        Self {
            m,
            l,
            groups,
            known_count: m.min(n_groups),
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Number of groups whose time index is at most M.
    pub fn known_count(&self) -> usize {
        self.known_count
    }

    /// Cells of time `t` (1-based) as 1-based `(row, column)` pairs.
    pub fn cells_at(&self, t: usize) -> Vec<(usize, usize)> {
        self.groups
            .get(t.wrapping_sub(1))
            .map(|g| g.iter().map(|&c| (c / self.m + 1, c % self.m + 1)).collect())
            .unwrap_or_default()
    }

    /// Row-major flags, true where the cell's time index is at most M.
    pub fn known_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.m * self.l];
        for group in &self.groups[..self.known_count] {
            for &c in group {
                mask[c] = true;
            }
        }
        mask
    }
}

pub fn anti_diagonal_groups(m: usize, l: usize) -> DiagonalIndex {
    DiagonalIndex::new(m, l)
}

/// Mean over anti-diagonals of each anti-diagonal's population variance.
pub fn diagonal_loss(output: &Matrix) -> f64 {
    let index = DiagonalIndex::new(output.cols(), output.rows());
    anti_diagonal_variance(output, index.groups())
}

/// Reads the forecast for `t_{M+1}..t_{M+L-1}` off an estimated delayed
/// attractor as the mean of each unknown anti-diagonal, taken about the
/// group's first cell so a constant group returns that value exactly.
pub fn extract_forecast(d_hat: &Matrix, m: usize, l: usize) -> Result<Vec<f64>> {
    if d_hat.shape() != (l, m) {
        return Err(Error::Shape {
            op: "extract_forecast",
            lhs: (l, m),
            rhs: d_hat.shape(),
        });
    }
    if l < 2 {
        return Err(Error::EmptyForecast(l));
    }
    let index = DiagonalIndex::new(m, l);
    Ok(index.groups()[m..]
        .iter()
        .map(|g| {
            let pivot = d_hat.data()[g[0]];
            pivot + g.iter().map(|&c| d_hat.data()[c] - pivot).sum::<f64>() / g.len() as f64
        })
        .collect())
}

/// Logs a warning when the delay count does not exceed twice the assumed
/// attractor dimension. Returns whether the bound holds.
pub fn check_embedding_bound(l: usize, assumed_dim: Option<f64>) -> bool {
    match assumed_dim {
        Some(d) if (l as f64) <= 2.0 * d => {
            log::warn!("L = {l} does not exceed 2·d = {}; delay embedding may not be faithful", 2.0 * d);
            false
        }
        _ => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delayed_attractor_small() {
        let d = build_delayed_attractor(&[1.0, 2.0, 3.0, 4.0], 3, 2).unwrap();
        assert_eq!(d.data(), &Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 3.0, 4.0]]).unwrap());
    }

    #[test]
    fn delayed_attractor_constant_and_short() {
        let d = build_delayed_attractor(&[2.5; 9], 5, 4).unwrap();
        assert!(d.data().data().iter().all(|&v| v == 2.5));
        assert!(matches!(
            build_delayed_attractor(&[1.0; 7], 5, 4),
            Err(Error::Length { needed: 8, have: 7 })
        ));
    }

    #[test]
    fn groups_two_by_two() {
        let idx = anti_diagonal_groups(2, 2);
        assert_eq!(idx.cells_at(1), vec![(1, 1)]);
        assert_eq!(idx.cells_at(2), vec![(1, 2), (2, 1)]);
        assert_eq!(idx.cells_at(3), vec![(2, 2)]);
        assert_eq!(idx.known_count(), 2);
    }

    #[test]
    fn groups_single_column() {
        let idx = anti_diagonal_groups(1, 5);
        assert_eq!(idx.groups().len(), 5);
        assert!(idx.groups().iter().all(|g| g.len() == 1));
    }

    #[test]
    fn groups_three_by_three_sizes() {
        // enumeration oracle: count cells (i, m) with i + m - 1 = t
        let mut expected = vec![0usize; 5];
        for i in 1..=3 {
            for m in 1..=3 {
                expected[i + m - 2] += 1;
            }
        }
        let sizes: Vec<usize> = anti_diagonal_groups(3, 3).groups().iter().map(Vec::len).collect();
        assert_eq!(sizes, expected);
        assert_eq!(sizes, vec![1, 2, 3, 2, 1]);
    }

    #[test]
    fn groups_partition_exhaustive() {
        for m in 1..=12 {
            for l in 1..=12 {
                let idx = anti_diagonal_groups(m, l);
                let mut seen = vec![0u8; m * l];
                for (t0, g) in idx.groups().iter().enumerate() {
                    for &c in g {
                        assert_eq!(c / m + c % m, t0);
                        seen[c] += 1;
                    }
                }
                assert!(seen.iter().all(|&s| s == 1));
                assert_eq!(idx.groups().iter().map(Vec::len).sum::<usize>(), m * l);
            }
        }
    }

    #[test]
    fn forecast_from_series_is_exact_tail() {
        let s: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin() * 3.1).collect();
        let d = build_delayed_attractor(&s, 8, 5).unwrap();
        assert_eq!(extract_forecast(d.data(), 8, 5).unwrap(), s[8..12].to_vec());
    }

    #[test]
    fn forecast_two_cell_mean() {
        let mut d = Matrix::zeros(3, 3);
        d.set(1, 2, 5.0);
        d.set(2, 1, 7.0);
        let f = extract_forecast(&d, 3, 3).unwrap();
        assert_eq!(f[0], 6.0);
    }

    #[test]
    fn forecast_needs_two_rows() {
        assert!(matches!(
            extract_forecast(&Matrix::zeros(1, 4), 4, 1),
            Err(Error::EmptyForecast(1))
        ));
        assert!(extract_forecast(&Matrix::zeros(2, 4), 3, 2).is_err());
    }

    #[test]
    fn series_built_attractor_has_zero_diagonal_loss() {
        let s: Vec<f64> = (0..20).map(|i| ((i * i) as f64).cos()).collect();
        let d = build_delayed_attractor(&s, 13, 8).unwrap();
        assert_eq!(diagonal_loss(d.data()), 0.0);
    }

    #[test]
    fn embedding_bound_warning() {
        assert!(!check_embedding_bound(4, Some(2.0)));
        assert!(check_embedding_bound(5, Some(2.0)));
        assert!(check_embedding_bound(2, None));
    }
}
