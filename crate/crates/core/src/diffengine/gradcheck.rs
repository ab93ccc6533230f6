//! Central finite-difference gradient checking.
//!
//! The checker only ever evaluates the forward pass; numerical derivatives
//! are formed from perturbed loss values and compared with what
//! [`Graph::backward`] reports.

use super::graph::{Graph, NodeId};
use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`, or the
    /// absolute difference when both norms are below `1e-8`.
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }
}

/// Compares backward gradients of a scalar loss with central differences.
///
/// `build` receives a fresh graph and the node ids of `params` (registered as
/// trainable leaves in the given order) and must return the scalar loss node.
/// It is called once per perturbation, so it has to be deterministic.
pub fn check_gradients<F>(params: &[(String, Matrix)], step: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[(String, Matrix)]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values
            .iter()
            .map(|(n, m)| g.parameter(n.clone(), m.clone()))
            .collect();
        let loss = build(&mut g, &ids)?;
        g.value(loss)
            .scalar()
            .ok_or_else(|| Error::Contract("gradient check needs a scalar loss".into()))
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params
        .iter()
        .map(|(n, m)| g.parameter(n.clone(), m.clone()))
        .collect();
    let loss = build(&mut g, &ids)?;
    let analytic = g.backward(loss)?;

    let mut work: Vec<(String, Matrix)> = params.to_vec();
    let mut checks = Vec::with_capacity(params.len());
    for (p, (name, value)) in params.iter().enumerate() {
        let mut numeric = Matrix::zeros(value.rows(), value.cols());
        for c in 0..value.len() {
            let orig = value.data()[c];
            work[p].1.data_mut()[c] = orig + step;
            let plus = eval(&work)?;
            work[p].1.data_mut()[c] = orig - step;
            let minus = eval(&work)?;
            work[p].1.data_mut()[c] = orig;
            numeric.data_mut()[c] = (plus - minus) / (2.0 * step);
        }
        let a = analytic
            .get(name)
            .ok_or_else(|| Error::Graph(format!("no gradient for {name}")))?;
        checks.push(ParamCheck {
            name: name.clone(),
            rel_error: relative_error(a, &numeric),
        });
    }
    Ok(GradCheckReport { params: checks })
}

fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    let norm = |m: &Matrix| m.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}
