//! Gridded scalar-field time series and their sampling windows.
//!
//! A [`GridSeries`] stores `values[t][row][col]` for uniformly spaced time
//! steps over a regular lat/lon grid. Row 0 sits at `lat0` and rows grow
//! northwards; column 0 sits at `lon0` and columns grow eastwards.

mod io;
mod lorenz96;

pub use io::{grid_to_raw, load_grid, read_grid, write_grid, GridFormat};
pub use lorenz96::{generate_lorenz96, integrate_lorenz96, Lorenz96Config};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::diffengine::Matrix;
use crate::embedding::InitialAttractor;
use crate::error::{Error, Result};

/// Time of the first grid step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeOrigin {
    Date(NaiveDate),
    Index(i64),
}

impl std::fmt::Display for TimeOrigin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TimeOrigin::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
            TimeOrigin::Index(i) => write!(f, "{i}"),
        }
    }
}

impl std::str::FromStr for TimeOrigin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(i) = s.parse::<i64>() {
            return Ok(TimeOrigin::Index(i));
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map(TimeOrigin::Date)
            .map_err(|e| Error::Format(format!("bad start time {s:?}: {e}")))
    }
}

/// Grid geometry and time axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub start: TimeOrigin,
    pub dt_days: f64,
    pub lat0: f64,
    pub lon0: f64,
    pub cell_deg: f64,
}

impl Default for GridMeta {
    fn default() -> Self {
        Self {
            start: TimeOrigin::Index(0),
            dt_days: 1.0,
            lat0: 0.0,
            lon0: 0.0,
            cell_deg: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSeries {
    t_len: usize,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    missing: Option<Vec<bool>>,
    meta: GridMeta,
}

impl GridSeries {
    pub fn new(t_len: usize, rows: usize, cols: usize, values: Vec<f64>, meta: GridMeta) -> Result<Self> {
        Self::with_mask(t_len, rows, cols, values, None, meta)
    }

    /// Builds a grid with an optional missing-data mask. Masked cells may hold
    /// any value; every unmasked value must be finite.
    pub fn with_mask(
        t_len: usize,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        missing: Option<Vec<bool>>,
        meta: GridMeta,
    ) -> Result<Self> {
        if t_len == 0 || rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!(
                "grid dims must be positive, got T={t_len} H={rows} W={cols}"
            )));
        }
        let n = t_len * rows * cols;
        if values.len() != n {
            return Err(Error::Dimension(format!(
                "T*H*W = {n} but {} values supplied",
                values.len()
            )));
        }
        if !(meta.dt_days > 0.0 && meta.dt_days.is_finite()) {
            return Err(Error::Format(format!("dt_days must be positive, got {}", meta.dt_days)));
        }
        if !(meta.cell_deg > 0.0 && meta.cell_deg.is_finite()) {
            return Err(Error::Format(format!("cell_deg must be positive, got {}", meta.cell_deg)));
        }
        if let Some(mask) = &missing {
            if mask.len() != n {
                return Err(Error::Dimension(format!(
                    "missing mask has {} cells, grid has {n}",
                    mask.len()
                )));
            }
        }
        let missing = missing.filter(|m| m.iter().any(|&b| b));
        for (i, v) in values.iter().enumerate() {
            let masked = missing.as_ref().is_some_and(|m| m[i]);
            if !masked && !v.is_finite() {
                let (t, r, c) = (i / (rows * cols), (i / cols) % rows, i % cols);
                return Err(Error::Format(format!("non-finite value at (t={t}, row={r}, col={c})")));
            }
        }
        Ok(Self {
            t_len,
            rows,
            cols,
            values,
            missing,
            meta,
        })
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing_mask(&self) -> Option<&[bool]> {
        self.missing.as_deref()
    }

    #[inline]
    fn offset(&self, t: usize, row: usize, col: usize) -> usize {
        (t * self.rows + row) * self.cols + col
    }

    #[inline]
    pub fn get(&self, t: usize, row: usize, col: usize) -> f64 {
        self.values[self.offset(t, row, col)]
    }

    pub fn is_missing(&self, t: usize, row: usize, col: usize) -> bool {
        self.missing
            .as_ref()
            .is_some_and(|m| m[self.offset(t, row, col)])
    }

    /// Calendar date of step `t` when the grid has a date origin.
    pub fn date_at(&self, t: usize) -> Option<NaiveDate> {
        match self.meta.start {
            TimeOrigin::Date(d) => {
                let days = (t as f64 * self.meta.dt_days).round() as i64;
                d.checked_add_signed(Duration::days(days))
            }
            TimeOrigin::Index(_) => None,
        }
    }

    /// Step index holding `date`, if it falls exactly on a grid step.
    pub fn index_of_date(&self, date: NaiveDate) -> Option<usize> {
        let TimeOrigin::Date(start) = self.meta.start else {
            return None;
        };
        let days = (date - start).num_days() as f64;
        let t = days / self.meta.dt_days;
        let ti = t.round();
        ((t - ti).abs() < 1e-9 && ti >= 0.0 && (ti as usize) < self.t_len).then_some(ti as usize)
    }

    /// Grid cell whose centre is nearest to `(lat, lon)`.
    pub fn cell_of(&self, lat: f64, lon: f64) -> Result<(usize, usize)> {
        let r = ((lat - self.meta.lat0) / self.meta.cell_deg).round();
        let c = ((lon - self.meta.lon0) / self.meta.cell_deg).round();
        if r < 0.0 || c < 0.0 || r as usize >= self.rows || c as usize >= self.cols {
            return Err(Error::Bounds(format!(
                "({lat}, {lon}) lies outside the {}x{} grid",
                self.rows, self.cols
            )));
        }
        Ok((r as usize, c as usize))
    }

    /// Half-width in cells of a square window spanning `window_deg` degrees.
    pub fn half_cells(&self, window_deg: f64) -> usize {
        ((window_deg / self.meta.cell_deg) / 2.0 + 1e-9).floor() as usize
    }
}

/// Placement of the association rectangle and time sampling of one target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub center_row: usize,
    pub center_col: usize,
    pub half_rows: usize,
    pub half_cols: usize,
    /// Sample count (rows of the initial attractor).
    pub m: usize,
    /// Delay rows of the delayed attractor.
    pub l: usize,
    /// Grid steps between consecutive samples.
    pub stride: usize,
    /// Grid step of the first sample.
    pub t_start: usize,
}

impl SamplingConfig {
    /// Spatial variable count N.
    pub fn variables(&self) -> usize {
        (2 * self.half_rows + 1) * (2 * self.half_cols + 1)
    }

    /// Column of the centre cell in the row-major flattened rectangle.
    pub fn k_index(&self) -> usize {
        self.half_rows * (2 * self.half_cols + 1) + self.half_cols
    }

    /// Grid step of sample `idx` (0-based).
    pub fn step_of(&self, idx: usize) -> usize {
        self.t_start + idx * self.stride
    }

    /// Whether the grid holds labels through `t_{M+L-1}`.
    pub fn has_full_labels(&self, grid: &GridSeries) -> bool {
        self.step_of(self.m + self.l - 2) < grid.t_len()
    }

    pub fn validate(&self, grid: &GridSeries) -> Result<()> {
        if self.m < 2 || self.l < 2 {
            return Err(Error::Parameter(format!(
                "need M >= 2 and L >= 2, got M={} L={}",
                self.m, self.l
            )));
        }
        if self.stride == 0 {
            return Err(Error::Parameter("stride must be positive".into()));
        }
        let fits = |center: usize, half: usize, len: usize| center >= half && center + half < len;
        if !fits(self.center_row, self.half_rows, grid.rows())
            || !fits(self.center_col, self.half_cols, grid.cols())
        {
            return Err(Error::Bounds(format!(
                "rectangle centred at ({}, {}) with half-size ({}, {}) exceeds the {}x{} grid",
                self.center_row,
                self.center_col,
                self.half_rows,
                self.half_cols,
                grid.rows(),
                grid.cols()
            )));
        }
        let last = self.step_of(self.m - 1);
        if last >= grid.t_len() {
            return Err(Error::Bounds(format!(
                "sample {} falls at step {last}, grid has {} steps",
                self.m,
                grid.t_len()
            )));
        }
        Ok(())
    }
}

/// Output of [`sample_window`].
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub attractor: InitialAttractor,
    /// Target series from `t_1`, through `t_{M+L-1}` when the grid extends
    /// that far and through `t_M` otherwise.
    pub labels: Vec<f64>,
    pub k_index: usize,
}

impl Window {
    pub fn has_full_labels(&self, l: usize) -> bool {
        self.labels.len() >= self.attractor.samples() + l - 1
    }
}

/// Reads the initial attractor and target labels for one sampling config.
/// Rectangle cells are flattened row-major.
pub fn sample_window(grid: &GridSeries, cfg: &SamplingConfig) -> Result<Window> {
    cfg.validate(grid)?;
    let r0 = cfg.center_row - cfg.half_rows;
    let c0 = cfg.center_col - cfg.half_cols;
    let (hr, hc) = (2 * cfg.half_rows + 1, 2 * cfg.half_cols + 1);
    let n = hr * hc;

    let mut missing = Vec::new();
    let mut data = Vec::with_capacity(cfg.m * n);
    for s in 0..cfg.m {
        let t = cfg.step_of(s);
        for dr in 0..hr {
            for dc in 0..hc {
                let (r, c) = (r0 + dr, c0 + dc);
                if grid.is_missing(t, r, c) {
                    missing.push((t, r, c));
                }
                data.push(grid.get(t, r, c));
            }
        }
    }

    let label_count = if cfg.has_full_labels(grid) {
        cfg.m + cfg.l - 1
    } else {
        cfg.m
    };
    let mut labels = Vec::with_capacity(label_count);
    for s in 0..label_count {
        let t = cfg.step_of(s);
        if s >= cfg.m && grid.is_missing(t, cfg.center_row, cfg.center_col) {
            missing.push((t, cfg.center_row, cfg.center_col));
        }
        labels.push(grid.get(t, cfg.center_row, cfg.center_col));
    }
    if !missing.is_empty() {
        return Err(Error::MissingData { cells: missing });
    }

    let k_index = cfg.k_index();
    let attractor = InitialAttractor::new(Matrix::from_vec(cfg.m, n, data)?, k_index)?;
    Ok(Window {
        attractor,
        labels,
        k_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_grid(t: usize, h: usize, w: usize) -> GridSeries {
        let values = (0..t * h * w).map(|i| i as f64 * 0.5 - 3.0).collect();
        GridSeries::new(t, h, w, values, GridMeta::default()).unwrap()
    }

    fn cfg(center: (usize, usize), half: (usize, usize), m: usize, l: usize, stride: usize, t0: usize) -> SamplingConfig {
        SamplingConfig {
            center_row: center.0,
            center_col: center.1,
            half_rows: half.0,
            half_cols: half.1,
            m,
            l,
            stride,
            t_start: t0,
        }
    }

    #[test]
    fn constant_grid_gives_constant_window() {
        let g = GridSeries::new(20, 5, 5, vec![1.25; 500], GridMeta::default()).unwrap();
        let w = sample_window(&g, &cfg((2, 2), (1, 2), 6, 3, 2, 1)).unwrap();
        assert!(w.attractor.data().data().iter().all(|&v| v == 1.25));
        assert!(w.labels.iter().all(|&v| v == 1.25));
        assert_eq!(w.labels.len(), 8);
    }

    #[test]
    fn degenerate_window_is_target_series() {
        let g = ramp_grid(30, 3, 4);
        let w = sample_window(&g, &cfg((1, 2), (0, 0), 5, 4, 3, 2)).unwrap();
        assert_eq!(w.attractor.variables(), 1);
        assert_eq!(w.attractor.data().column(0), w.labels[..5].to_vec());
    }

    #[test]
    fn two_degree_window_on_quarter_grid() {
        let meta = GridMeta {
            cell_deg: 0.25,
            ..GridMeta::default()
        };
        let g = GridSeries::new(3, 20, 20, vec![0.0; 1200], meta).unwrap();
        let half = g.half_cells(2.0);
        let c = cfg((10, 10), (half, half), 2, 2, 1, 0);
        assert_eq!(c.variables(), 81);
        assert_eq!(sample_window(&g, &c).unwrap().attractor.variables(), 81);
    }

    #[test]
    fn brute_force_indexing() {
        let g = ramp_grid(40, 6, 7);
        let c = cfg((3, 4), (2, 1), 6, 3, 3, 2);
        let w = sample_window(&g, &c).unwrap();
        for m in 0..6 {
            let mut j = 0;
            for r in 1..=5 {
                for col in 3..=5 {
                    assert_eq!(w.attractor.data().get(m, j), g.get(2 + 3 * m, r, col));
                    j += 1;
                }
            }
        }
        assert_eq!(w.attractor.data().column(w.k_index), w.labels[..6].to_vec());
    }

    #[test]
    fn labels_truncate_at_grid_end() {
        let g = ramp_grid(10, 1, 1);
        let w = sample_window(&g, &cfg((0, 0), (0, 0), 8, 5, 1, 0)).unwrap();
        assert_eq!(w.labels.len(), 8);
        assert!(!w.has_full_labels(5));
    }

    #[test]
    fn out_of_bounds_rectangle() {
        let g = ramp_grid(10, 3, 3);
        assert!(matches!(
            sample_window(&g, &cfg((0, 1), (1, 1), 3, 2, 1, 0)),
            Err(Error::Bounds(_))
        ));
        assert!(matches!(
            sample_window(&g, &cfg((1, 1), (1, 1), 6, 2, 2, 0)),
            Err(Error::Bounds(_))
        ));
    }

    #[test]
    fn masked_cell_reported() {
        let mut mask = vec![false; 10 * 9];
        mask[(4 * 3 + 2) * 3 + 1] = true; // t=4, row=2, col=1
        let g = GridSeries::with_mask(10, 3, 3, vec![0.0; 90], Some(mask), GridMeta::default()).unwrap();
        match sample_window(&g, &cfg((1, 1), (1, 1), 5, 2, 1, 0)) {
            Err(Error::MissingData { cells }) => assert_eq!(cells, vec![(4, 2, 1)]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn date_lookup() {
        let meta = GridMeta {
            start: "2013-09-01".parse().unwrap(),
            ..GridMeta::default()
        };
        let g = GridSeries::new(60, 1, 1, vec![0.0; 60], meta).unwrap();
        let d = NaiveDate::from_ymd_opt(2013, 10, 1).unwrap();
        assert_eq!(g.index_of_date(d), Some(30));
        assert_eq!(g.date_at(30), Some(d));
    }
}
