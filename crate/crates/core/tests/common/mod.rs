#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stfm::diffengine::Matrix;
use stfm::grid::{generate_lorenz96, GridSeries, Lorenz96Config, SamplingConfig};

pub fn random_matrix(seed: u64, rows: usize, cols: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// A 1×K Lorenz-96 ring with `steps` states after the default spin-up.
pub fn lorenz_grid(seed: u64, k: usize, steps: usize) -> GridSeries {
    generate_lorenz96(&Lorenz96Config {
        k,
        steps,
        seed,
        ..Lorenz96Config::default()
    })
    .expect("valid Lorenz-96 config")
}

/// Nine-variable ring segment centred on `col`.
pub fn ring_sampling(col: usize, m: usize, l: usize, t_start: usize) -> SamplingConfig {
    SamplingConfig {
        center_row: 0,
        center_col: col,
        half_rows: 0,
        half_cols: 4,
        m,
        l,
        stride: 1,
        t_start,
    }
}
