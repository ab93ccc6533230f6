//! Sliding-window trend/seasonal split of each variable's series.
//!
//! Input is the transposed attractor `Xᵀ` (N variables × M times). The trend
//! at column `j` (1-based) is the mean of the last `size` samples ending at
//! `t_j`, or the prefix mean of `t_1..t_j` while fewer than `size` samples
//! exist. The seasonal part is whatever the trend leaves over.

use serde::{Deserialize, Serialize};

use crate::diffengine::Matrix;
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub trend: Matrix,
    pub season: Matrix,
    pub window: usize,
}

pub fn trend_decompose(x_t: &Matrix, size: usize) -> Result<Matrix> {
    if size < 1 {
        return Err(Error::Parameter("decomposition window must be at least 1".into()));
    }
    let (n, m) = x_t.shape();
    let mut trend = Matrix::zeros(n, m);
    for i in 0..n {
        let row = x_t.row(i);
        for j in 0..m {
            let start = (j + 1).saturating_sub(size);
            let window = &row[start..=j];
            trend.set(i, j, window.iter().sum::<f64>() / window.len() as f64);
        }
    }
    Ok(trend)
}

pub fn season_decompose(x_t: &Matrix, size: usize) -> Result<Matrix> {
    Ok(decompose(x_t, size)?.season)
}

/// Trend and season together; `season` is computed as `x − trend`, so the
/// two always add back to the input.
pub fn decompose(x_t: &Matrix, size: usize) -> Result<Decomposition> {
    let trend = trend_decompose(x_t, size)?;
    let season = x_t.sub(&trend)?;
    Ok(Decomposition {
        trend,
        season,
        window: size,
    })
}
