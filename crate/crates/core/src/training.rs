//! Composite loss and the full-batch optimization loop.
//!
//! The network output is anchored at the last observation of the target
//! (`Output' = Output + λ_base·x_k(t_M)`), fitted to the known cells of the
//! delayed attractor by MSE, and pushed towards anti-diagonal consistency by
//! `λ_diag·diagonal_loss(Output')`. In the default masked mode only cells
//! with time index ≤ M are fitted; the unknown triangle is shaped by the
//! consistency term alone.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffengine::{Gradients, Graph, Matrix, NodeId};
use crate::embedding::{extract_forecast, DiagonalIndex, InitialAttractor};
use crate::error::{Error, Result};
use crate::model::{forward, init_params, predict_output, ModelConfig, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_base: f64,
    pub lambda_diag: f64,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub standardize: bool,
    /// Fit every cell of D (offline studies only; needs labels through
    /// `t_{M+L-1}`).
    pub teacher_forced: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_base: 1.0,
            lambda_diag: 1.0,
            lr: 1e-3,
            max_epochs: 2000,
            patience: 100,
            min_delta: 1e-5,
            seed: 0,
            standardize: true,
            teacher_forced: false,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lambda_diag >= 0.0) || !(self.lambda_base >= 0.0) {
            return Err(Error::Config("lambda_base and lambda_diag must be non-negative".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub mse: f64,
    pub diag: f64,
}

/// Per-variable affine scaling fitted on the training window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    /// Population mean/std of every column; zero spread is an error.
    pub fn fit(data: &Matrix) -> Result<Self> {
        let (m, n) = data.shape();
        let mut mean = Vec::with_capacity(n);
        let mut std = Vec::with_capacity(n);
        for j in 0..n {
            let col = data.column(j);
            let mu = col.iter().sum::<f64>() / m as f64;
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / m as f64;
            let sd = var.sqrt();
            if !(sd > 1e-12 * mu.abs().max(1.0)) {
                return Err(Error::ConstantVariable { column: j });
            }
            mean.push(mu);
            std.push(sd);
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, column: usize, v: f64) -> f64 {
        (v - self.mean[column]) / self.std[column]
    }

    pub fn invert(&self, column: usize, v: f64) -> f64 {
        v * self.std[column] + self.mean[column]
    }

    /// Scales an M×N attractor and returns it transposed (N×M).
    pub fn transform_transposed(&self, data: &Matrix) -> Matrix {
        Matrix::from_fn(data.cols(), data.rows(), |i, j| self.apply(i, data.get(j, i)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochLoss>,
    pub stopped_epoch: usize,
    pub standardization: Standardization,
}

impl TrainReport {
    /// One JSON object per epoch: `{"epoch", "total", "mse", "diag"}`.
    pub fn to_jsonl(&self) -> String {
        self.history
            .iter()
            .map(|e| serde_json::to_string(e).expect("plain struct serializes") + "\n")
            .collect()
    }
}

/// Handles of the loss nodes built by [`total_loss`].
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub anchored: NodeId,
    pub mse: NodeId,
    pub diag: NodeId,
    pub total: NodeId,
}

/// Builds `MSE_known(Output', D) + λ_diag·diagonal_loss(Output')` with
/// `Output' = Output + λ_base·anchor`.
pub fn total_loss(
    g: &mut Graph,
    output: NodeId,
    d_true: &Matrix,
    known_mask: &[bool],
    anchor: f64,
    lambda_base: f64,
    lambda_diag: f64,
) -> Result<LossNodes> {
    let anchored = g.add_scalar(output, lambda_base * anchor)?;
    let mse = g.masked_mse(anchored, d_true, known_mask)?;
    let diag = g.diagonal_loss(anchored)?;
    let weighted = g.scale(diag, lambda_diag)?;
    let total = g.add(mse, weighted)?;
    Ok(LossNodes {
        anchored,
        mse,
        diag,
        total,
    })
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    first: BTreeMap<String, Matrix>,
    second: BTreeMap<String, Matrix>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Graph(format!("no gradient for parameter {name}")))?;
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| Matrix::zeros(p.rows(), p.cols()));
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| Matrix::zeros(p.rows(), p.cols()));
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *w -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Fits a fresh network to a prepared (standardized) problem.
///
/// `x_t` is the N×M network input, `d_true` the L×M target and `known_mask`
/// the cells the MSE may read. Nothing outside the mask is ever read from
/// `d_true`.
pub fn fit(
    x_t: &Matrix,
    d_true: &Matrix,
    known_mask: &[bool],
    anchor: f64,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochLoss>)> {
    cfg.validate()?;
    model.validate()?;
    let mut params = init_params(model, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEE_CE66_D1CE_5EED);
    let mut adam = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let out = forward(&mut g, &bound, x_t, model, true, &mut rng)?;
        let loss = total_loss(&mut g, out, d_true, known_mask, anchor, cfg.lambda_base, cfg.lambda_diag)?;
        let total = g.value(loss.total).data()[0];
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(EpochLoss {
            epoch,
            total,
            mse: g.value(loss.mse).data()[0],
            diag: g.value(loss.diag).data()[0],
        });
        let grads = g.backward(loss.total)?;
        adam.step(&mut params, &grads)?;

        if total < best - cfg.min_delta {
            best = total;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: history.len() });
    }
    Ok((params, history))
}

/// A trained network together with everything needed to forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    #[serde(skip)]
    pub params: ModelParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub k_index: usize,
    pub report: TrainReport,
}

/// Forecast read off a trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Anchored output in model (standardized) units.
    pub anchored_output: Matrix,
    /// Predictions for `t_{M+1}..t_{M+L-1}` in data units.
    pub forecast: Vec<f64>,
}

impl TrainedModel {
    pub fn predict(&self, o: &InitialAttractor) -> Result<Prediction> {
        let scaling = &self.report.standardization;
        let x_t = scaling.transform_transposed(o.data());
        let k = self.k_index;
        let anchor = scaling.apply(k, o.data().get(o.samples() - 1, k));
        let out = predict_output(&self.params, &self.model, &x_t)?;
        let anchored = out.map(|v| v + self.train.lambda_base * anchor);
        let forecast = extract_forecast(&anchored, self.model.m, self.model.l)?
            .into_iter()
            .map(|v| scaling.invert(k, v))
            .collect();
        Ok(Prediction {
            anchored_output: anchored,
            forecast,
        })
    }

    /// Serializes everything except the parameters, for checkpoint metadata.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain struct serializes")
    }

    pub fn from_parts(params: ModelParams, meta: serde_json::Value) -> Result<Self> {
        let mut model: TrainedModel =
            serde_json::from_value(meta).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        params.check_shapes(&model.model)?;
        model.params = params;
        Ok(model)
    }
}

/// Standardizes the window, builds the delayed-attractor target from the
/// labels and fits the network.
///
/// `labels` must cover `t_1..t_M`; in masked mode only those are used even if
/// more are supplied.
pub fn train(o: &InitialAttractor, labels: &[f64], model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainedModel> {
    let (m, n) = o.data().shape();
    if model.n != n || model.m != m {
        return Err(Error::Shape {
            op: "train",
            lhs: (model.n, model.m),
            rhs: (n, m),
        });
    }
    let l = model.l;
    if labels.len() < m {
        return Err(Error::Length {
            needed: m,
            have: labels.len(),
        });
    }
    if cfg.teacher_forced && labels.len() < m + l - 1 {
        return Err(Error::Length {
            needed: m + l - 1,
            have: labels.len(),
        });
    }

    let scaling = if cfg.standardize {
        Standardization::fit(o.data())?
    } else {
        Standardization::identity(n)
    };
    let k = o.k_index();
    let x_t = scaling.transform_transposed(o.data());
    let index = DiagonalIndex::new(m, l);
    let mask = if cfg.teacher_forced {
        vec![true; l * m]
    } else {
        index.known_mask()
    };
    let mut d_true = Matrix::zeros(l, m);
    for i in 0..l {
        for j in 0..m {
            if mask[i * m + j] {
                d_true.set(i, j, scaling.apply(k, labels[i + j]));
            }
        }
    }
    let anchor = scaling.apply(k, labels[m - 1]);
    let (params, history) = fit(&x_t, &d_true, &mask, anchor, model, cfg)?;
    Ok(TrainedModel {
        params,
        model: *model,
        train: *cfg,
        k_index: k,
        report: TrainReport {
            stopped_epoch: history.len(),
            history,
            standardization: scaling,
        },
    })
}
