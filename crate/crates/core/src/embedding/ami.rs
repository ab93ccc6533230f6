use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_AMI_BINS: usize = 16;

/// Lags whose AMI lies within this relative margin of a local minimum belong
/// to the same flat basin.
pub const AMI_PLATEAU_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DelayMethod {
    FirstLocalMinimum,
    GlobalArgmin,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmiSelection {
    pub tau: usize,
    pub method: DelayMethod,
    /// AMI for lags `0..=max_lag`, in nats.
    pub curve: Vec<f64>,
}

/// Histogram estimate of `I(x_t; x_{t+lag})` with `bins` equal-width bins
/// spanning the range of the whole series.
pub fn average_mutual_information(series: &[f64], lag: usize, bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::Parameter("AMI needs at least one bin".into()));
    }
    if lag >= series.len() {
        return Err(Error::Range(format!(
            "lag {lag} leaves no pairs in a series of length {}",
            series.len()
        )));
    }
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let width = hi - lo;
    if !(width > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let bin = |v: f64| (((v - lo) / width * bins as f64) as usize).min(bins - 1);

    let pairs = series.len() - lag;
    let mut joint = vec![0usize; bins * bins];
    let mut left = vec![0usize; bins];
    let mut right = vec![0usize; bins];
    for t in 0..pairs {
        let (a, b) = (bin(series[t]), bin(series[t + lag]));
        joint[a * bins + b] += 1;
        left[a] += 1;
        right[b] += 1;
    }
    let n = pairs as f64;
    let mut info = 0.0;
    for a in 0..bins {
        for b in 0..bins {
            let c = joint[a * bins + b];
            if c == 0 {
                continue;
            }
            let p = c as f64 / n;
            info += p * (p * n * n / (left[a] as f64 * right[b] as f64)).ln();
        }
    }
    Ok(info)
}

/// Picks the embedding delay as the first local minimum of the AMI curve over
/// lags `1..=max_lag`, falling back to the global argmin when the curve has
/// no interior minimum. When the minimum opens a flat basin (see
/// [`AMI_PLATEAU_TOL`]) the centre of the basin is returned.
pub fn select_delay_ami(series: &[f64], max_lag: usize, bins: usize) -> Result<AmiSelection> {
    if max_lag == 0 || max_lag >= series.len() || series.len() <= max_lag + 1 {
        return Err(Error::Range(format!(
            "max_lag {max_lag} invalid for series of length {}",
            series.len()
        )));
    }
    let curve = (0..=max_lag)
        .map(|lag| average_mutual_information(series, lag, bins))
        .collect::<Result<Vec<_>>>()?;

    let first_min = (1..max_lag).find(|&t| curve[t] < curve[t - 1] && curve[t] <= curve[t + 1]);
    let (tau, method) = match first_min {
        Some(t) => {
            let floor = curve[t] * (1.0 + AMI_PLATEAU_TOL);
            let end = (t..=max_lag).take_while(|&j| curve[j] <= floor).last().unwrap_or(t);
            ((t + end) / 2, DelayMethod::FirstLocalMinimum)
        }
        None => {
            let t = (1..=max_lag)
                .min_by(|&a, &b| curve[a].total_cmp(&curve[b]))
                .unwrap_or(1);
            (t, DelayMethod::GlobalArgmin)
        }
    };
    Ok(AmiSelection { tau, method, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_series_rejected() {
        assert!(matches!(
            select_delay_ami(&[3.0; 50], 10, 16),
            Err(Error::ZeroVariance)
        ));
    }

    #[test]
    fn lag_range_checked() {
        let s: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(matches!(select_delay_ami(&s, 10, 16), Err(Error::Range(_))));
        assert!(matches!(select_delay_ami(&s, 0, 16), Err(Error::Range(_))));
    }

    #[test]
    fn sine_first_minimum_near_quarter_period() {
        let s: Vec<f64> = (0..2000)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 40.0).sin())
            .collect();
        let sel = select_delay_ami(&s, 30, DEFAULT_AMI_BINS).unwrap();
        assert_eq!(sel.method, DelayMethod::FirstLocalMinimum);
        assert!((8..=12).contains(&sel.tau), "tau = {}", sel.tau);
    }

    #[test]
    fn white_noise_gives_small_delay() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s: Vec<f64> = (0..4000).map(|_| rng.gen::<f64>()).collect();
        let sel = select_delay_ami(&s, 20, DEFAULT_AMI_BINS).unwrap();
        let spread = sel.curve[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - sel.curve[1..].iter().copied().fold(f64::INFINITY, f64::min);
        assert!(spread < 0.05, "AMI should be flat for noise, spread {spread}");
        assert!(sel.tau <= 5, "tau = {}", sel.tau);
    }

    #[test]
    fn monotone_curve_falls_back_to_argmin() {
        // A slow ramp decorrelates monotonically over short lags.
        let s: Vec<f64> = (0..400).map(|t| t as f64).collect();
        let sel = select_delay_ami(&s, 12, 8).unwrap();
        assert_eq!(sel.method, DelayMethod::GlobalArgmin);
        let best = sel.curve[1..].iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(sel.curve[sel.tau], best);
    }
}
