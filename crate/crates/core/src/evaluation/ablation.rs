//! Component ablation: the same point experiment under switched-off parts.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{persistence_baseline, run_point_experiment};
use crate::error::Result;
use crate::grid::{GridSeries, SamplingConfig};
use crate::model::{ModelConfig, Variant};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub anti_diagonal: bool,
    pub attention: bool,
    /// Anchor the output at the last observation.
    pub benchmark: bool,
    pub trend: bool,
    pub season: bool,
}

impl AblationRow {
    /// Switches the row's components on `model`/`train`; everything else is
    /// kept. A disabled loss term gets weight zero.
    pub fn apply(&self, model: &ModelConfig, train: &TrainConfig) -> Result<(ModelConfig, TrainConfig)> {
        let model = ModelConfig {
            variant: self.variant,
            use_attention: self.attention,
            use_trend: self.trend,
            use_season: self.season,
            ..*model
        };
        model.validate()?;
        let train = TrainConfig {
            lambda_diag: if self.anti_diagonal { train.lambda_diag } else { 0.0 },
            lambda_base: if self.benchmark { train.lambda_base } else { 0.0 },
            ..*train
        };
        train.validate()?;
        Ok((model, train))
    }
}

/// The eight reference rows: the two plain networks with and without
/// decomposition, then the full model and one row per removed component.
pub fn default_ablation_matrix() -> Vec<AblationRow> {
    let row = |variant, anti_diagonal, attention, benchmark, decompose| AblationRow {
        variant,
        anti_diagonal,
        attention,
        benchmark,
        trend: decompose,
        season: decompose,
    };
    use Variant::{Stfm, StfmV1};
    vec![
        row(Stfm, false, false, false, true),
        row(StfmV1, false, false, false, true),
        row(Stfm, false, false, false, false),
        row(StfmV1, false, false, false, false),
        row(StfmV1, true, true, true, true),
        row(StfmV1, false, true, true, true),
        row(StfmV1, true, false, true, true),
        row(StfmV1, true, true, false, true),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: AblationRow,
    pub rmse: f64,
    pub mape: Option<f64>,
    pub output_diag_loss: f64,
    pub persistence_rmse: f64,
}

/// Runs every row on the same window with the same seed. All rows are
/// validated before any training starts.
pub fn run_ablation(
    grid: &GridSeries,
    sampling: &SamplingConfig,
    model: &ModelConfig,
    train: &TrainConfig,
    rows: &[AblationRow],
) -> Result<Vec<AblationResult>> {
    let configs = rows
        .iter()
        .map(|r| r.apply(model, train))
        .collect::<Result<Vec<_>>>()?;
    let persistence = persistence_baseline(grid, sampling)?;
    rows.par_iter()
        .zip(configs.par_iter())
        .map(|(row, (model, train))| {
            let report = run_point_experiment(grid, sampling, model, train)?;
            Ok(AblationResult {
                row: *row,
                rmse: report.model.rmse,
                mape: report.model.mape,
                output_diag_loss: report.output_diag_loss,
                persistence_rmse: persistence.rmse,
            })
        })
        .collect()
}

fn mark(on: bool) -> &'static str {
    if on {
        "yes"
    } else {
        "no"
    }
}

/// One line per result; an undefined MAPE is left empty.
pub fn ablation_csv(results: &[AblationResult]) -> String {
    let mut out = String::from(
        "variant,anti_diagonal_loss,self_attention,benchmark_value,temporal_decompose,seasonal_decompose,rmse,mape,output_diag_loss\n",
    );
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{:?},{},{:?}",
            r.row.variant,
            mark(r.row.anti_diagonal),
            mark(r.row.attention),
            mark(r.row.benchmark),
            mark(r.row.trend),
            mark(r.row.season),
            r.rmse,
            r.mape.map(|m| format!("{m:?}")).unwrap_or_default(),
            r.output_diag_loss,
        );
    }
    out
}
