use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GridMeta, GridSeries, TimeOrigin};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lorenz96Config {
    /// Number of ring variables.
    pub k: usize,
    pub forcing: f64,
    /// RK4 step; also the spacing of the emitted series.
    pub dt: f64,
    /// Emitted states.
    pub steps: usize,
    /// States integrated and discarded before the first emitted one.
    pub spinup: usize,
    pub seed: u64,
}

impl Default for Lorenz96Config {
    fn default() -> Self {
        Self {
            k: 40,
            forcing: 8.0,
            dt: 0.05,
            steps: 1000,
            spinup: 1000,
            seed: 0,
        }
    }
}

/// `dx_k/dt = (x_{k+1} − x_{k−2})·x_{k−1} − x_k + F`, indices mod K.
fn tendency(x: &[f64], forcing: f64, out: &mut [f64]) {
    let k = x.len();
    for i in 0..k {
        let xp1 = x[(i + 1) % k];
        let xm1 = x[(i + k - 1) % k];
        let xm2 = x[(i + k - 2) % k];
        out[i] = (xp1 - xm2) * xm1 - x[i] + forcing;
    }
}

fn rk4_step(x: &mut [f64], forcing: f64, dt: f64, scratch: &mut [Vec<f64>; 5]) {
    let [k1, k2, k3, k4, tmp] = scratch;
    let n = x.len();
    tendency(x, forcing, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    tendency(tmp, forcing, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    tendency(tmp, forcing, k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    tendency(tmp, forcing, k4);
    for i in 0..n {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrates from an explicit initial state, returning `steps` states of
/// length K after discarding `spinup` states.
pub fn integrate_lorenz96(initial: &[f64], forcing: f64, dt: f64, steps: usize, spinup: usize) -> Result<Vec<Vec<f64>>> {
    if initial.len() < 4 {
        return Err(Error::Dimension(format!(
            "Lorenz-96 needs K >= 4 variables, got {}",
            initial.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("dt must be positive, got {dt}")));
    }
    if steps == 0 {
        return Err(Error::Parameter("steps must be at least 1".into()));
    }
    let n = initial.len();
    let mut x = initial.to_vec();
    let mut scratch: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    let mut out = Vec::with_capacity(steps);
    for step in 1..=spinup + steps {
        rk4_step(&mut x, forcing, dt, &mut scratch);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        if step > spinup {
            out.push(x.clone());
        }
    }
    Ok(out)
}

/// Seeded Lorenz-96 run laid out as a 1×K grid (one row, K columns).
pub fn generate_lorenz96(cfg: &Lorenz96Config) -> Result<GridSeries> {
    if cfg.k < 4 {
        return Err(Error::Dimension(format!("Lorenz-96 needs K >= 4 variables, got {}", cfg.k)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial: Vec<f64> = (0..cfg.k)
        .map(|_| cfg.forcing + rng.gen_range(-1.0..1.0))
        .collect();
    let states = integrate_lorenz96(&initial, cfg.forcing, cfg.dt, cfg.steps, cfg.spinup)?;
    let values = states.into_iter().flatten().collect();
    GridSeries::new(
        cfg.steps,
        1,
        cfg.k,
        values,
        GridMeta {
            start: TimeOrigin::Index(0),
            dt_days: cfg.dt,
            lat0: 0.0,
            lon0: 0.0,
            cell_deg: 1.0,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_state_zero_forcing_is_fixed_point() {
        let states = integrate_lorenz96(&[0.0; 8], 0.0, 0.05, 50, 5).unwrap();
        assert!(states.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn too_few_variables() {
        let cfg = Lorenz96Config {
            k: 3,
            ..Default::default()
        };
        assert!(matches!(generate_lorenz96(&cfg), Err(Error::Dimension(_))));
    }

    #[test]
    fn divergence_names_step() {
        let err = integrate_lorenz96(&[1e200, -1e200, 1e200, -1e200], 8.0, 0.05, 10, 0).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 1 }), "{err}");
    }

    #[test]
    fn seeded_runs_are_identical() {
        let cfg = Lorenz96Config {
            steps: 200,
            spinup: 100,
            seed: 42,
            ..Default::default()
        };
        let a = generate_lorenz96(&cfg).unwrap();
        let b = generate_lorenz96(&cfg).unwrap();
        assert_eq!(a.values(), b.values());
        let c = generate_lorenz96(&Lorenz96Config { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn bounded_over_long_run() {
        let cfg = Lorenz96Config {
            steps: 10_000,
            spinup: 0,
            seed: 1,
            ..Default::default()
        };
        let g = generate_lorenz96(&cfg).unwrap();
        let max = g.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 30.0, "max |x| = {max}");
    }
}
