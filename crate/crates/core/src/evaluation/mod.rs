//! Metrics, the persistence baseline and experiment drivers.

mod ablation;
mod parallel;

pub use ablation::{ablation_csv, default_ablation_matrix, run_ablation, AblationResult, AblationRow};
pub use parallel::{
    meteorological_seasons, per_slide_csv, per_step_csv, run_parallel_experiment, run_parallel_experiment_ordered,
    run_seasonal_experiment, ParallelReport, ParallelRunSpec, SeasonStart, StepRmse, TaskOutcome, TaskRecord,
};

use serde::{Deserialize, Serialize};

use crate::embedding::diagonal_loss;
use crate::error::{Error, Result};
use crate::grid::{sample_window, GridSeries, SamplingConfig, Window};
use crate::model::ModelConfig;
use crate::training::{train, TrainConfig, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    /// Percent; `None` when some truth value is zero.
    pub mape: Option<f64>,
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} truth values",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Dimension("metrics need at least one value".into()));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

pub fn mape(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    if let Some(index) = truth.iter().position(|&t| t == 0.0) {
        return Err(Error::MapeUndefined { index });
    }
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| ((p - t) / t).abs()).sum();
    Ok(100.0 * s / pred.len() as f64)
}

/// RMSE and MAPE together; an undefined MAPE leaves `mape` empty.
pub fn compute_metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    Ok(Metrics {
        rmse: rmse(pred, truth)?,
        mape: match mape(pred, truth) {
            Ok(v) => Some(v),
            Err(Error::MapeUndefined { .. }) => None,
            Err(e) => return Err(e),
        },
    })
}

/// Every future step forecast as the last observed value.
pub fn persistence_forecast(last: f64, horizon: usize) -> Vec<f64> {
    vec![last; horizon]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub predictions: Vec<f64>,
    pub truth: Vec<f64>,
    pub per_step_error: Vec<f64>,
    pub rmse: f64,
    pub mape: Option<f64>,
}

impl ForecastResult {
    pub fn new(predictions: Vec<f64>, truth: Vec<f64>) -> Result<Self> {
        let metrics = compute_metrics(&predictions, &truth)?;
        let per_step_error = predictions.iter().zip(&truth).map(|(p, t)| (p - t).abs()).collect();
        Ok(Self {
            predictions,
            truth,
            per_step_error,
            rmse: metrics.rmse,
            mape: metrics.mape,
        })
    }

    /// RMSE over the first `steps` forecast steps.
    pub fn rmse_first(&self, steps: usize) -> f64 {
        let n = steps.min(self.per_step_error.len());
        (self.per_step_error[..n].iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt()
    }
}

/// Model and persistence forecasts for one target point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub sampling: SamplingConfig,
    pub model: ForecastResult,
    pub persistence: ForecastResult,
    /// Anti-diagonal variance of the anchored output (model units).
    pub output_diag_loss: f64,
    pub stopped_epoch: usize,
    pub final_loss: f64,
}

fn window_with_truth(grid: &GridSeries, sampling: &SamplingConfig) -> Result<Window> {
    let window = sample_window(grid, sampling)?;
    if !window.has_full_labels(sampling.l) {
        return Err(Error::Length {
            needed: sampling.m + sampling.l - 1,
            have: window.labels.len(),
        });
    }
    Ok(window)
}

/// Persistence forecast and metrics for one sampling config; no training.
pub fn persistence_baseline(grid: &GridSeries, sampling: &SamplingConfig) -> Result<ForecastResult> {
    let window = window_with_truth(grid, sampling)?;
    let m = sampling.m;
    let truth = window.labels[m..m + sampling.l - 1].to_vec();
    ForecastResult::new(persistence_forecast(window.labels[m - 1], truth.len()), truth)
}

/// Sets the problem dims of `model` from the sampling config.
pub fn model_for_sampling(model: &ModelConfig, sampling: &SamplingConfig) -> ModelConfig {
    ModelConfig {
        n: sampling.variables(),
        m: sampling.m,
        l: sampling.l,
        ..*model
    }
}

/// Trains on one window (labels through `t_M` only), forecasts the next
/// L−1 steps and scores them against held-out truth.
pub fn run_point_experiment_with_model(
    grid: &GridSeries,
    sampling: &SamplingConfig,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(PointReport, TrainedModel)> {
    let window = window_with_truth(grid, sampling)?;
    let model = model_for_sampling(model, sampling);
    let m = sampling.m;
    let trained = train(&window.attractor, &window.labels[..m], &model, train_cfg)?;
    let prediction = trained.predict(&window.attractor)?;
    let truth = window.labels[m..m + sampling.l - 1].to_vec();
    let persistence = persistence_forecast(window.labels[m - 1], truth.len());
    let report = PointReport {
        sampling: *sampling,
        model: ForecastResult::new(prediction.forecast, truth.clone())?,
        persistence: ForecastResult::new(persistence, truth)?,
        output_diag_loss: diagonal_loss(&prediction.anchored_output),
        stopped_epoch: trained.report.stopped_epoch,
        final_loss: trained.report.history.last().map_or(f64::NAN, |e| e.total),
    };
    Ok((report, trained))
}

pub fn run_point_experiment(
    grid: &GridSeries,
    sampling: &SamplingConfig,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<PointReport> {
    run_point_experiment_with_model(grid, sampling, model, train_cfg).map(|(r, _)| r)
}
