//! The attractor-to-attractor networks.
//!
//! Both variants read the transposed initial attractor `Xᵀ` (N×M), pass it
//! through the trend/seasonal linear heads and map the result to an L×M
//! estimate of the delayed attractor:
//!
//! * [`Variant::Stfm`]: two fully connected layers with a ReLU between them.
//! * [`Variant::StfmV1`]: six normalized ReLU/dropout blocks with residual
//!   links after blocks 4 and 6, a self-attention branch added after block 2,
//!   and a linear read-out.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decompose::{decompose, DEFAULT_WINDOW};
use crate::diffengine::{AttentionWeights, Graph, Matrix, NodeId};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Stfm,
    StfmV1,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Stfm => "stfm",
            Variant::StfmV1 => "stfm_v1",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Spatial variables.
    pub n: usize,
    /// Sample times.
    pub m: usize,
    /// Delay rows.
    pub l: usize,
    pub hidden: usize,
    pub dropout_rate: f64,
    pub decompose_size: usize,
    pub use_attention: bool,
    pub use_trend: bool,
    pub use_season: bool,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn new(n: usize, m: usize, l: usize) -> Self {
        Self {
            n,
            m,
            l,
            hidden: 64,
            dropout_rate: 0.1,
            decompose_size: DEFAULT_WINDOW,
            use_attention: true,
            use_trend: true,
            use_season: true,
            variant: Variant::StfmV1,
        }
    }

    pub fn use_decompose(&self) -> bool {
        self.use_trend || self.use_season
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.l == 0 || self.hidden == 0 {
            return Err(Error::Config(format!(
                "N, M, L and hidden must be positive (N={}, M={}, L={}, hidden={})",
                self.n, self.m, self.l, self.hidden
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.decompose_size == 0 {
            return Err(Error::Config("decompose_size must be at least 1".into()));
        }
        match self.variant {
            Variant::Stfm if self.use_attention => {
                Err(Error::Config("self-attention is only part of the stfm_v1 variant".into()))
            }
            Variant::StfmV1 if !self.hidden.is_multiple_of(2) => {
                Err(Error::Config(format!("stfm_v1 needs an even hidden width, got {}", self.hidden)))
            }
            _ => Ok(()),
        }
    }

    /// Every parameter as `(name, rows, cols, is_weight)`; weights are
    /// randomly initialized, biases and norm shifts start at zero.
    pub fn param_shapes(&self) -> Vec<(String, usize, usize, ParamKind)> {
        use ParamKind::*;
        let (n, l, h) = (self.n, self.l, self.hidden);
        let mut shapes = Vec::new();
        let mut push = |name: &str, r: usize, c: usize, kind: ParamKind| shapes.push((name.to_string(), r, c, kind));
        if self.use_trend {
            push("trend.w", n, n, Weight);
            push("trend.b", n, 1, Bias);
        }
        if self.use_season {
            push("season.w", n, n, Weight);
            push("season.b", n, 1, Bias);
        }
        match self.variant {
            Variant::Stfm => {
                push("fc1.w", h, n, Weight);
                push("fc1.b", h, 1, Bias);
                push("fc2.w", l, h, Weight);
                push("fc2.b", l, 1, Bias);
            }
            Variant::StfmV1 => {
                let h2 = h / 2;
                let dims = [(h, n), (h2, h), (h2, h2), (h2, h2), (h2, h2), (h2, h2)];
                for (i, (r, c)) in dims.into_iter().enumerate() {
                    let p = format!("l{}", i + 1);
                    push(&format!("{p}.w"), r, c, Weight);
                    push(&format!("{p}.b"), r, 1, Bias);
                    push(&format!("{p}.gamma"), r, 1, Gain);
                    push(&format!("{p}.beta"), r, 1, Bias);
                }
                if self.use_attention {
                    push("attn.wq", h, h, Weight);
                    push("attn.wk", h, h, Weight);
                    push("attn.wv", h, h, Weight);
                    push("attn.wo", h2, h, Weight);
                }
                push("out.w", l, h2, Weight);
                push("out.b", l, 1, Bias);
            }
        }
        shapes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gain,
}

/// Named parameter matrices of one network.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelParams {
    entries: BTreeMap<String, Matrix>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Matrix::is_finite)
    }

    /// Checks that exactly the parameters of `cfg` are present with the
    /// right shapes.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let shapes = cfg.param_shapes();
        if shapes.len() != self.entries.len() {
            return Err(Error::Config(format!(
                "config expects {} parameters, found {}",
                shapes.len(),
                self.entries.len()
            )));
        }
        for (name, r, c, _) in shapes {
            match self.entries.get(&name) {
                Some(m) if m.shape() == (r, c) => {}
                Some(m) => {
                    return Err(Error::Shape {
                        op: "parameter",
                        lhs: (r, c),
                        rhs: m.shape(),
                    })
                }
                None => return Err(Error::Config(format!("parameter {name} missing"))),
            }
        }
        Ok(())
    }

    /// Registers every parameter as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        BoundParams {
            ids: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), g.parameter(k.clone(), v.clone())))
                .collect(),
        }
    }
}

/// Graph handles of bound parameters.
#[derive(Debug, Clone)]
pub struct BoundParams {
    ids: BTreeMap<String, NodeId>,
}

impl BoundParams {
    /// Wraps handles of leaves registered elsewhere, e.g. by a gradient
    /// checker.
    pub fn from_ids(ids: impl IntoIterator<Item = (String, NodeId)>) -> Self {
        Self {
            ids: ids.into_iter().collect(),
        }
    }

    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter {name} not bound")))
    }
}

/// Weights ~ U(−a, a) with `a = sqrt(6 / fan_in)`; biases and shifts 0,
/// layer-norm gains 1.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new();
    for (name, r, c, kind) in cfg.param_shapes() {
        let m = match kind {
            ParamKind::Weight => {
                let a = (6.0 / c as f64).sqrt();
                Matrix::from_fn(r, c, |_, _| loop {
                    let u: f64 = rng.gen();
                    if u > 0.0 {
                        break a * (2.0 * u - 1.0);
                    }
                })
            }
            ParamKind::Bias => Matrix::zeros(r, c),
            ParamKind::Gain => Matrix::filled(r, c, 1.0),
        };
        params.insert(name, m);
    }
    Ok(params)
}

fn check_input(x_t: &Matrix, cfg: &ModelConfig) -> Result<()> {
    if x_t.shape() != (cfg.n, cfg.m) {
        return Err(Error::Shape {
            op: "model input",
            lhs: (cfg.n, cfg.m),
            rhs: x_t.shape(),
        });
    }
    Ok(())
}

fn finite_stage(g: &Graph, id: NodeId, stage: &str) -> Result<NodeId> {
    if g.value(id).is_finite() {
        Ok(id)
    } else {
        Err(Error::NonFiniteActivation {
            stage: stage.to_string(),
        })
    }
}

/// `X̃ᵀ = Linear_t(Trend(Xᵀ)) + Linear_s(Season(Xᵀ))`, or `Xᵀ` itself when
/// both heads are disabled.
pub fn forward_decompose_heads(g: &mut Graph, bound: &BoundParams, x_t: &Matrix, cfg: &ModelConfig) -> Result<NodeId> {
    check_input(x_t, cfg)?;
    if !cfg.use_decompose() {
        return Ok(g.constant(x_t.clone()));
    }
    let parts = decompose(x_t, cfg.decompose_size)?;
    let mut heads = Vec::with_capacity(2);
    if cfg.use_trend {
        let t = g.constant(parts.trend);
        heads.push(g.affine(bound.id("trend.w")?, t, bound.id("trend.b")?)?);
    }
    if cfg.use_season {
        let s = g.constant(parts.season);
        heads.push(g.affine(bound.id("season.w")?, s, bound.id("season.b")?)?);
    }
    let mut out = heads[0];
    for &h in &heads[1..] {
        out = g.add(out, h)?;
    }
    finite_stage(g, out, "decompose heads")
}

fn v1_block<R: Rng + ?Sized>(
    g: &mut Graph,
    bound: &BoundParams,
    layer: &str,
    input: NodeId,
    cfg: &ModelConfig,
    train: bool,
    rng: &mut R,
) -> Result<NodeId> {
    let z = g.affine(bound.id(&format!("{layer}.w"))?, input, bound.id(&format!("{layer}.b"))?)?;
    let z = g.layer_norm(
        z,
        bound.id(&format!("{layer}.gamma"))?,
        bound.id(&format!("{layer}.beta"))?,
        LAYER_NORM_EPS,
    )?;
    let z = g.relu(z)?;
    g.dropout(z, cfg.dropout_rate, train, rng)
}

/// The six-block stack; returns the L×M output node.
pub fn forward_stfm_v1<R: Rng + ?Sized>(
    g: &mut Graph,
    bound: &BoundParams,
    x_tilde: NodeId,
    cfg: &ModelConfig,
    train: bool,
    rng: &mut R,
) -> Result<NodeId> {
    let x1 = v1_block(g, bound, "l1", x_tilde, cfg, train, rng)?;
    let x1 = finite_stage(g, x1, "block 1")?;
    let attention = if cfg.use_attention {
        let w = AttentionWeights {
            wq: bound.id("attn.wq")?,
            wk: bound.id("attn.wk")?,
            wv: bound.id("attn.wv")?,
            wo: bound.id("attn.wo")?,
        };
        let a = g.self_attention(x1, w)?;
        Some(finite_stage(g, a, "self-attention")?)
    } else {
        None
    };
    let mut x2 = v1_block(g, bound, "l2", x1, cfg, train, rng)?;
    if let Some(a) = attention {
        x2 = g.add(x2, a)?;
    }
    let x2 = finite_stage(g, x2, "block 2")?;
    let x3 = v1_block(g, bound, "l3", x2, cfg, train, rng)?;
    let x3 = finite_stage(g, x3, "block 3")?;
    let x4 = v1_block(g, bound, "l4", x3, cfg, train, rng)?;
    let x4 = g.add(x4, x3)?;
    let x4 = finite_stage(g, x4, "block 4")?;
    let x5 = v1_block(g, bound, "l5", x4, cfg, train, rng)?;
    let x5 = finite_stage(g, x5, "block 5")?;
    let x6 = v1_block(g, bound, "l6", x5, cfg, train, rng)?;
    let x6 = g.add(x6, x5)?;
    let x6 = finite_stage(g, x6, "block 6")?;
    let out = g.affine(bound.id("out.w")?, x6, bound.id("out.b")?)?;
    finite_stage(g, out, "output")
}

/// `W_2 · ReLU(W_1 · X̃ᵀ + b_1) + b_2`.
pub fn forward_stfm(g: &mut Graph, bound: &BoundParams, x_tilde: NodeId) -> Result<NodeId> {
    let h = g.affine(bound.id("fc1.w")?, x_tilde, bound.id("fc1.b")?)?;
    let h = g.relu(h)?;
    let h = finite_stage(g, h, "hidden layer")?;
    let out = g.affine(bound.id("fc2.w")?, h, bound.id("fc2.b")?)?;
    finite_stage(g, out, "output")
}

/// Full network: decomposition heads followed by the configured variant.
pub fn forward<R: Rng + ?Sized>(
    g: &mut Graph,
    bound: &BoundParams,
    x_t: &Matrix,
    cfg: &ModelConfig,
    train: bool,
    rng: &mut R,
) -> Result<NodeId> {
    let x_tilde = forward_decompose_heads(g, bound, x_t, cfg)?;
    match cfg.variant {
        Variant::Stfm => forward_stfm(g, bound, x_tilde),
        Variant::StfmV1 => forward_stfm_v1(g, bound, x_tilde, cfg, train, rng),
    }
}

/// Eval-mode output for `x_t`.
pub fn predict_output(params: &ModelParams, cfg: &ModelConfig, x_t: &Matrix) -> Result<Matrix> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let out = forward(&mut g, &bound, x_t, cfg, false, &mut NoRng)?;
    Ok(g.value(out).clone())
}

/// Eval mode never draws random numbers.
struct NoRng;

impl RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("eval-mode forward drew a random number")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("eval-mode forward drew a random number")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("eval-mode forward drew a random number")
    }
    fn try_fill_bytes(&mut self, _: &mut [u8]) -> std::result::Result<(), rand::Error> {
        unreachable!("eval-mode forward drew a random number")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            hidden: 8,
            ..ModelConfig::new(5, 6, 4)
        }
    }

    fn input(cfg: &ModelConfig) -> Matrix {
        Matrix::from_fn(cfg.n, cfg.m, |i, j| 20.0 + ((i * 3 + j) as f64 * 0.37).sin())
    }

    #[test]
    fn init_is_seeded() {
        let cfg = small_cfg();
        assert_eq!(init_params(&cfg, 9).unwrap(), init_params(&cfg, 9).unwrap());
        assert_ne!(init_params(&cfg, 9).unwrap(), init_params(&cfg, 10).unwrap());
    }

    #[test]
    fn init_within_bounds() {
        let cfg = small_cfg();
        for seed in 0..100 {
            let p = init_params(&cfg, seed).unwrap();
            for (name, r, c, kind) in cfg.param_shapes() {
                let m = p.get(&name).unwrap();
                assert_eq!(m.shape(), (r, c));
                match kind {
                    ParamKind::Weight => {
                        let a = (6.0 / c as f64).sqrt();
                        assert!(m.data().iter().all(|v| v.abs() < a), "{name}");
                    }
                    ParamKind::Bias => assert!(m.data().iter().all(|&v| v == 0.0)),
                    ParamKind::Gain => assert!(m.data().iter().all(|&v| v == 1.0)),
                }
            }
        }
    }

    #[test]
    fn decompose_bypass_is_identity() {
        let cfg = ModelConfig {
            use_trend: false,
            use_season: false,
            ..small_cfg()
        };
        let p = init_params(&cfg, 1).unwrap();
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let x = input(&cfg);
        let out = forward_decompose_heads(&mut g, &b, &x, &cfg).unwrap();
        assert_eq!(g.value(out), &x);
    }

    #[test]
    fn identity_heads_reconstruct_input() {
        let cfg = small_cfg();
        let mut p = init_params(&cfg, 1).unwrap();
        p.insert("trend.w", Matrix::identity(cfg.n));
        p.insert("season.w", Matrix::identity(cfg.n));
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let x = input(&cfg);
        let out = forward_decompose_heads(&mut g, &b, &x, &cfg).unwrap();
        assert_eq!(g.value(out), &x);
    }

    #[test]
    fn heads_shape_and_input_check() {
        let cfg = small_cfg();
        let p = init_params(&cfg, 2).unwrap();
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let out = forward_decompose_heads(&mut g, &b, &input(&cfg), &cfg).unwrap();
        assert_eq!(g.value(out).shape(), (cfg.n, cfg.m));
        assert!(forward_decompose_heads(&mut g, &b, &Matrix::zeros(4, 6), &cfg).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        for variant in [Variant::Stfm, Variant::StfmV1] {
            let cfg = ModelConfig {
                variant,
                use_attention: variant == Variant::StfmV1,
                ..small_cfg()
            };
            let mut p = init_params(&cfg, 3).unwrap();
            for (_, m) in p.iter_mut() {
                *m = Matrix::zeros(m.rows(), m.cols());
            }
            let out = predict_output(&p, &cfg, &input(&cfg)).unwrap();
            assert_eq!(out.shape(), (cfg.l, cfg.m));
            assert!(out.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn stfm_constant_output_from_bias() {
        let cfg = ModelConfig {
            variant: Variant::Stfm,
            use_attention: false,
            ..small_cfg()
        };
        let mut p = init_params(&cfg, 3).unwrap();
        p.insert("fc1.w", Matrix::zeros(8, 5));
        p.insert("fc2.w", Matrix::zeros(4, 8));
        p.insert("fc2.b", Matrix::filled(4, 1, 2.5));
        let out = predict_output(&p, &cfg, &input(&cfg)).unwrap();
        assert!(out.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn stfm_scalar_case() {
        let cfg = ModelConfig {
            variant: Variant::Stfm,
            use_attention: false,
            use_trend: false,
            use_season: false,
            hidden: 1,
            ..ModelConfig::new(1, 3, 1)
        };
        let mut p = ModelParams::new();
        p.insert("fc1.w", Matrix::filled(1, 1, 2.0));
        p.insert("fc1.b", Matrix::filled(1, 1, -1.0));
        p.insert("fc2.w", Matrix::filled(1, 1, 3.0));
        p.insert("fc2.b", Matrix::filled(1, 1, 0.5));
        let x = Matrix::from_rows(&[[0.0, 1.0, 2.0]]).unwrap();
        let out = predict_output(&p, &cfg, &x).unwrap();
        let expect: Vec<f64> = [0.0f64, 1.0, 2.0].iter().map(|&x| 3.0 * (2.0 * x - 1.0).max(0.0) + 0.5).collect();
        assert_eq!(out.data(), expect.as_slice());
    }

    #[test]
    fn eval_forward_is_deterministic_and_train_is_seeded() {
        let cfg = small_cfg();
        let p = init_params(&cfg, 4).unwrap();
        let x = input(&cfg);
        assert_eq!(predict_output(&p, &cfg, &x).unwrap(), predict_output(&p, &cfg, &x).unwrap());

        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Graph::new();
            let b = p.bind(&mut g);
            let out = forward(&mut g, &b, &x, &cfg, true, &mut rng).unwrap();
            g.value(out).clone()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn attention_with_stfm_is_config_error() {
        let cfg = ModelConfig {
            variant: Variant::Stfm,
            use_attention: true,
            ..small_cfg()
        };
        assert!(matches!(init_params(&cfg, 0), Err(Error::Config(_))));
        let odd = ModelConfig { hidden: 7, ..small_cfg() };
        assert!(matches!(odd.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn ablation_flags_keep_output_shape() {
        for (att, tr, se) in [(true, true, true), (false, true, false), (true, false, false)] {
            let cfg = ModelConfig {
                use_attention: att,
                use_trend: tr,
                use_season: se,
                ..small_cfg()
            };
            let p = init_params(&cfg, 0).unwrap();
            p.check_shapes(&cfg).unwrap();
            assert_eq!(predict_output(&p, &cfg, &input(&cfg)).unwrap().shape(), (4, 6));
        }
    }
}
