//! Lorenz-96 skill pilot: STFM-V1 vs persistence over seeded trials.
//!
//! Usage: `cargo run --release -p stfm --example l96_pilot -- [key=value ...]`
//! with keys trials, offset, hidden, epochs, lr, patience, dropout, size, lambda_diag,
//! lambda_base, stride, steps, col.

use std::collections::HashMap;
use std::time::Instant;

use stfm::evaluation::run_point_experiment;
use stfm::grid::{generate_lorenz96, Lorenz96Config, SamplingConfig};
use stfm::model::ModelConfig;
use stfm::training::TrainConfig;

fn main() {
    let args: HashMap<String, String> = std::env::args()
        .skip(1)
        .filter_map(|a| a.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let get = |k: &str, d: f64| args.get(k).map_or(d, |v| v.parse().expect("number"));

    let trials = get("trials", 20.0) as u64;
    let (m, l) = (30, 8);
    let model = ModelConfig {
        hidden: get("hidden", 64.0) as usize,
        dropout_rate: get("dropout", 0.1),
        decompose_size: get("size", 7.0) as usize,
        ..ModelConfig::new(9, m, l)
    };
    let train = TrainConfig {
        max_epochs: get("epochs", 2000.0) as usize,
        lr: get("lr", 1e-3),
        patience: get("patience", 100.0) as usize,
        lambda_diag: get("lambda_diag", 1.0),
        lambda_base: get("lambda_base", 1.0),
        ..TrainConfig::default()
    };
    let stride = get("stride", 1.0) as usize;
    let col = get("col", 20.0) as usize;
    let offset = get("offset", 0.0) as u64;

    let start = Instant::now();
    let mut wins = 0;
    for trial in offset..offset + trials {
        let grid = generate_lorenz96(&Lorenz96Config {
            steps: (m + l) * stride + 10,
            seed: trial,
            ..Lorenz96Config::default()
        })
        .unwrap();
        let sampling = SamplingConfig {
            center_row: 0,
            center_col: col,
            half_rows: 0,
            half_cols: 4,
            m,
            l,
            stride,
            t_start: 0,
        };
        let r = run_point_experiment(&grid, &sampling, &model, &TrainConfig { seed: trial, ..train }).unwrap();
        let (a, b) = (r.model.rmse_first(5), r.persistence.rmse_first(5));
        wins += usize::from(a < b);
        println!(
            "trial {trial:2}: model {a:.4} persistence {b:.4} epochs {} loss {:.4e}",
            r.stopped_epoch, r.final_loss
        );
    }
    println!(
        "wins {wins}/{trials} ({:.0}%), {:.1}s",
        100.0 * wins as f64 / trials as f64,
        start.elapsed().as_secs_f64()
    );
}
