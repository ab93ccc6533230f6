//! Built-in verification suites: gradient checks of every graph kernel and
//! of the full networks, plus the core numerical invariants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decompose::decompose;
use crate::diffengine::gradcheck::check_gradients;
use crate::diffengine::{AttentionWeights, Graph, Matrix, NodeId};
use crate::embedding::{build_delayed_attractor, diagonal_loss, DiagonalIndex};
use crate::error::Result;
use crate::model::{forward, init_params, BoundParams, ModelConfig, Variant};
use crate::training::total_loss;

pub const GRAD_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-6;

/// Outcome of one suite entry. `value` is the measured error (relative error
/// for gradient checks).
#[derive(Debug, Clone)]
pub struct SuiteCheck {
    pub name: String,
    pub value: f64,
    pub passed: bool,
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// Entries bounded away from zero, so ReLU kinks sit outside the FD stencil.
fn off_zero(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| {
        let v: f64 = rng.gen_range(0.2..1.0);
        if rng.gen() {
            v
        } else {
            -v
        }
    })
}

/// Scalar read-out with a non-uniform gradient.
fn readout(g: &mut Graph, y: NodeId) -> Result<NodeId> {
    let shifted = g.add_scalar(y, 0.3)?;
    g.sum_squares(shifted)
}

type Build = Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>>;

fn grad_entry(name: &str, params: Vec<(&str, Matrix)>, build: Build) -> Result<SuiteCheck> {
    let params: Vec<(String, Matrix)> = params.into_iter().map(|(n, m)| (n.to_string(), m)).collect();
    let report = check_gradients(&params, FD_STEP, build)?;
    let value = report.max_rel_error();
    Ok(SuiteCheck {
        name: name.to_string(),
        value,
        passed: value < GRAD_TOL,
    })
}

/// Finite-difference check of every kernel.
pub fn kernel_gradient_suite(seed: u64) -> Result<Vec<SuiteCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    out.push(grad_entry(
        "matmul",
        vec![("a", random(&mut rng, 3, 4)), ("b", random(&mut rng, 4, 2))],
        Box::new(|g, p| {
            let y = g.matmul(p[0], p[1])?;
            readout(g, y)
        }),
    )?);
    out.push(grad_entry(
        "transpose",
        vec![("a", random(&mut rng, 3, 4))],
        Box::new(|g, p| {
            let y = g.transpose(p[0])?;
            readout(g, y)
        }),
    )?);
    out.push(grad_entry(
        "add",
        vec![("a", random(&mut rng, 3, 4)), ("b", random(&mut rng, 3, 4))],
        Box::new(|g, p| {
            let y = g.add(p[0], p[1])?;
            readout(g, y)
        }),
    )?);
    out.push(grad_entry(
        "add_bias",
        vec![("x", random(&mut rng, 3, 4)), ("b", random(&mut rng, 3, 1))],
        Box::new(|g, p| {
            let y = g.add_bias(p[0], p[1])?;
            readout(g, y)
        }),
    )?);
    out.push(grad_entry(
        "add_scalar",
        vec![("x", random(&mut rng, 2, 3))],
        Box::new(|g, p| {
            let y = g.add_scalar(p[0], -0.7)?;
            readout(g, y)
        }),
    )?);
    out.push(grad_entry(
        "scale",
        vec![("x", random(&mut rng, 2, 3))],
        Box::new(|g, p| {
            let y = g.scale(p[0], 1.7)?;
            readout(g, y)
        }),
    )?);
    out.push(grad_entry(
        "affine",
        vec![
            ("w", random(&mut rng, 3, 4)),
            ("x", random(&mut rng, 4, 5)),
            ("b", random(&mut rng, 3, 1)),
        ],
        Box::new(|g, p| {
            let y = g.affine(p[0], p[1], p[2])?;
            readout(g, y)
        }),
    )?);
    out.push(grad_entry(
        "relu",
        vec![("x", off_zero(&mut rng, 3, 4))],
        Box::new(|g, p| {
            let y = g.relu(p[0])?;
            readout(g, y)
        }),
    )?);
    out.push(grad_entry(
        "dropout",
        vec![("x", random(&mut rng, 4, 5))],
        Box::new(|g, p| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(99);
            let y = g.dropout(p[0], 0.3, true, &mut mask_rng)?;
            readout(g, y)
        }),
    )?);
    out.push(grad_entry(
        "layer_norm",
        vec![
            ("x", random(&mut rng, 5, 4)),
            ("gamma", random(&mut rng, 5, 1)),
            ("beta", random(&mut rng, 5, 1)),
        ],
        Box::new(|g, p| {
            let y = g.layer_norm(p[0], p[1], p[2], 1e-5)?;
            readout(g, y)
        }),
    )?);
    out.push(grad_entry(
        "softmax_rows",
        vec![("x", random(&mut rng, 3, 5))],
        Box::new(|g, p| {
            let y = g.softmax_rows(p[0])?;
            readout(g, y)
        }),
    )?);
    out.push(grad_entry(
        "self_attention",
        vec![
            ("x", random(&mut rng, 4, 6)),
            ("wq", random(&mut rng, 4, 4)),
            ("wk", random(&mut rng, 4, 4)),
            ("wv", random(&mut rng, 4, 4)),
            ("wo", random(&mut rng, 2, 4)),
        ],
        Box::new(|g, p| {
            let w = AttentionWeights {
                wq: p[1],
                wk: p[2],
                wv: p[3],
                wo: p[4],
            };
            let y = g.self_attention(p[0], w)?;
            readout(g, y)
        }),
    )?);
    let target = random(&mut rng, 4, 5);
    let mask = DiagonalIndex::new(5, 4).known_mask();
    out.push(grad_entry(
        "masked_mse",
        vec![("x", random(&mut rng, 4, 5))],
        Box::new(move |g, p| g.masked_mse(p[0], &target, &mask)),
    )?);
    out.push(grad_entry(
        "diagonal_loss",
        vec![("x", random(&mut rng, 4, 5))],
        Box::new(|g, p| g.diagonal_loss(p[0])),
    )?);
    out.push(grad_entry(
        "sum",
        vec![("x", random(&mut rng, 3, 3))],
        Box::new(|g, p| {
            let y = g.scale(p[0], 2.0)?;
            let y = g.relu(y)?;
            g.sum(y)
        }),
    )?);
    out.push(grad_entry(
        "sum_squares",
        vec![("x", random(&mut rng, 3, 3))],
        Box::new(|g, p| g.sum_squares(p[0])),
    )?);
    Ok(out)
}

/// Finite-difference check of the complete training loss of a network
/// (forward pass with dropout, anchoring, masked MSE and anti-diagonal term).
pub fn network_gradient_check(cfg: &ModelConfig, seed: u64) -> Result<SuiteCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_params(cfg, seed)?;
    // Non-trivial shifts so every parameter carries gradient.
    let params: Vec<(String, Matrix)> = params
        .iter()
        .map(|(n, m)| {
            let jitter = random(&mut rng, m.rows(), m.cols()).scale(0.1);
            (n.to_string(), m.add(&jitter).expect("same shape"))
        })
        .collect();
    let x_t = random(&mut rng, cfg.n, cfg.m);
    let d_true = random(&mut rng, cfg.l, cfg.m);
    let mask = DiagonalIndex::new(cfg.m, cfg.l).known_mask();
    let anchor = 0.4;
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    let cfg = *cfg;
    let build = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
        let bound = BoundParams::from_ids(names.iter().cloned().zip(ids.iter().copied()));
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD0);
        let out = forward(g, &bound, &x_t, &cfg, true, &mut dropout_rng)?;
        Ok(total_loss(g, out, &d_true, &mask, anchor, 1.0, 1.0)?.total)
    };
    let report = check_gradients(&params, FD_STEP, build)?;
    let value = report.max_rel_error();
    Ok(SuiteCheck {
        name: format!("{} network (N={}, M={}, L={}, hidden={})", cfg.variant, cfg.n, cfg.m, cfg.l, cfg.hidden),
        value,
        passed: value < GRAD_TOL,
    })
}

/// Kernel checks followed by both networks at the reference size
/// N=6, M=8, L=4, hidden=8.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteCheck>> {
    let mut out = kernel_gradient_suite(seed)?;
    let v1 = ModelConfig {
        hidden: 8,
        decompose_size: 3,
        ..ModelConfig::new(6, 8, 4)
    };
    out.push(network_gradient_check(&v1, seed)?);
    let plain = ModelConfig {
        variant: Variant::Stfm,
        use_attention: false,
        ..v1
    };
    out.push(network_gradient_check(&plain, seed)?);
    Ok(out)
}

/// Numerical invariants: decomposition identity, anti-diagonal loss
/// properties.
pub fn invariant_suite(seed: u64) -> Result<Vec<SuiteCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let check = |name: &str, value: f64, passed: bool| SuiteCheck {
        name: name.to_string(),
        value,
        passed,
    };

    let x = Matrix::from_fn(5, 20, |_, _| rng.gen_range(1.0..2.0));
    let parts = decompose(&x, 7)?;
    let recomposed = parts.trend.add(&parts.season)?;
    out.push(check("trend + season == input (bitwise)", 0.0, recomposed == x));

    let c = Matrix::filled(3, 12, 4.25);
    let parts = decompose(&c, 7)?;
    let fixed = parts.trend == c && parts.season.data().iter().all(|&v| v == 0.0);
    out.push(check("constant series fixed point", 0.0, fixed));

    let series: Vec<f64> = (0..40).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let d = build_delayed_attractor(&series, 30, 8)?;
    let v = diagonal_loss(d.data());
    out.push(check("series-built delayed attractor has zero diagonal loss", v, v == 0.0));

    let y = random(&mut rng, 6, 9);
    let shifted = y.map(|v| v + 3.5);
    let diff = (diagonal_loss(&y) - diagonal_loss(&shifted)).abs();
    out.push(check("diagonal loss shift invariance", diff, diff <= 1e-12));

    let hand = Matrix::from_rows(&[[1.0, 2.0], [4.0, 3.0]])?;
    let v = diagonal_loss(&hand);
    out.push(check("diagonal loss hand case = 1/3", v, v == 1.0 / 3.0));
    Ok(out)
}
