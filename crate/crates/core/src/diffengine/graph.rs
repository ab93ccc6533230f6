use std::collections::BTreeMap;

use rand::Rng;

use super::matrix::Matrix;
use crate::embedding::DiagonalIndex;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    AddScalar(NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    MulConst(NodeId, Matrix),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(NodeId),
    MaskedMse {
        x: NodeId,
        cells: Vec<usize>,
        targets: Vec<f64>,
    },
    DiagonalLoss {
        x: NodeId,
        groups: Vec<Vec<usize>>,
    },
    Sum(NodeId),
    SumSquares(NodeId),
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddBias(a, b) => vec![*a, *b],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Transpose(a)
            | Op::AddScalar(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::MulConst(a, _)
            | Op::SoftmaxRows(a)
            | Op::Sum(a)
            | Op::SumSquares(a) => vec![*a],
            Op::MaskedMse { x, .. } | Op::DiagonalLoss { x, .. } => vec![*x],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    param: Option<String>,
    requires_grad: bool,
}

/// Weight handles of a single-head self-attention block.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
}

/// Gradients of every trainable parameter, keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_name: BTreeMap<String, Matrix>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }
}

/// Append-only computation graph over dense matrices with reverse-mode
/// differentiation.
///
/// Nodes are recorded in creation order, which is always a valid
/// topological order: an operation can only reference nodes that already
/// exist. `backward` walks the tape in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf.
    pub fn parameter(&mut self, name: impl Into<String>, value: Matrix) -> NodeId {
        self.push_node(value, Op::Leaf, Some(name.into()), true)
    }

    /// Registers a non-trainable leaf (data).
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push_node(value, Op::Leaf, None, false)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(&[a, b])?;
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(&[a])?;
        let value = self.value(a).transpose();
        Ok(self.push(value, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(&[a, b])?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape {
                op: "add",
                lhs: va.shape(),
                rhs: vb.shape(),
            });
        }
        let value = va.add(vb)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds a p×1 column to every column of a p×M node.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check(&[x, bias])?;
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.cols() != 1 || vb.rows() != vx.rows() {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: vx.shape(),
                rhs: vb.shape(),
            });
        }
        let value = Matrix::from_fn(vx.rows(), vx.cols(), |i, j| vx.get(i, j) + vb.get(i, 0));
        Ok(self.push(value, Op::AddBias(x, bias)))
    }

    /// Adds a data constant to every entry.
    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.check(&[x])?;
        let value = self.value(x).map(|v| v + c);
        Ok(self.push(value, Op::AddScalar(x)))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> Result<NodeId> {
        self.check(&[x])?;
        let value = self.value(x).scale(s);
        Ok(self.push(value, Op::Scale(x, s)))
    }

    /// `value = W·X + b`, with `b` broadcast across columns.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let wx = self.matmul(w, x)?;
        self.add_bias(wx, b)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(&[x])?;
        let value = self.value(x).map(|v| v.max(0.0));
        Ok(self.push(value, Op::Relu(x)))
    }

    /// Inverted dropout. Identity in eval mode or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: NodeId,
        rate: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<NodeId> {
        self.check(&[x])?;
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let (r, c) = self.value(x).shape();
        let mask = Matrix::from_fn(r, c, |_, _| {
            if rng.gen::<f64>() < rate {
                0.0
            } else {
                keep
            }
        });
        let value = self.value(x).zip_map(&mask, |a, m| a * m)?;
        Ok(self.push(value, Op::MulConst(x, mask)))
    }

    /// Normalizes each column over its rows (the feature axis), then applies
    /// the per-feature gain and shift.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        self.check(&[x, gamma, beta])?;
        let vx = self.value(x);
        let (h, m) = vx.shape();
        for p in [gamma, beta] {
            let vp = self.value(p);
            if vp.shape() != (h, 1) {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: vx.shape(),
                    rhs: vp.shape(),
                });
            }
        }
        if h == 0 {
            return Err(Error::Parameter("layer_norm over zero features".into()));
        }
        let mut normalized = Matrix::zeros(h, m);
        let mut inv_std = Vec::with_capacity(m);
        for j in 0..m {
            let mean = (0..h).map(|i| vx.get(i, j)).sum::<f64>() / h as f64;
            let var = (0..h).map(|i| (vx.get(i, j) - mean).powi(2)).sum::<f64>() / h as f64;
            let s = 1.0 / (var + eps).sqrt();
            for i in 0..h {
                normalized.set(i, j, (vx.get(i, j) - mean) * s);
            }
            inv_std.push(s);
        }
        let (vg, vb) = (self.value(gamma), self.value(beta));
        let value = Matrix::from_fn(h, m, |i, j| vg.get(i, 0) * normalized.get(i, j) + vb.get(i, 0));
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
        ))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(&[x])?;
        let vx = self.value(x);
        let (r, c) = vx.shape();
        let mut value = Matrix::zeros(r, c);
        for i in 0..r {
            let row = vx.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (j, e) in exps.into_iter().enumerate() {
                value.set(i, j, e / z);
            }
        }
        Ok(self.push(value, Op::SoftmaxRows(x)))
    }

    /// Single-head scaled dot-product attention across the columns (time
    /// positions) of an h×M input, projected to (h/2)×M by `wo`.
    pub fn self_attention(&mut self, x: NodeId, w: AttentionWeights) -> Result<NodeId> {
        self.check(&[x, w.wq, w.wk, w.wv, w.wo])?;
        let h = self.value(x).rows();
        if !h.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "self-attention needs an even feature count, got {h}"
            )));
        }
        for p in [w.wq, w.wk, w.wv] {
            if self.value(p).shape() != (h, h) {
                return Err(Error::Shape {
                    op: "self_attention",
                    lhs: (h, h),
                    rhs: self.value(p).shape(),
                });
            }
        }
        if self.value(w.wo).shape() != (h / 2, h) {
            return Err(Error::Shape {
                op: "self_attention(wo)",
                lhs: (h / 2, h),
                rhs: self.value(w.wo).shape(),
            });
        }
        let q = self.matmul(w.wq, x)?;
        let k = self.matmul(w.wk, x)?;
        let v = self.matmul(w.wv, x)?;
        let qt = self.transpose(q)?;
        let raw = self.matmul(qt, k)?;
        let scores = self.scale(raw, 1.0 / (h as f64).sqrt())?;
        let attn = self.softmax_rows(scores)?;
        let attn_t = self.transpose(attn)?;
        let context = self.matmul(v, attn_t)?;
        self.matmul(w.wo, context)
    }

    /// Mean squared error over the cells flagged in `mask` only. Cells outside
    /// the mask are never read from `target`.
    pub fn masked_mse(&mut self, x: NodeId, target: &Matrix, mask: &[bool]) -> Result<NodeId> {
        self.check(&[x])?;
        let vx = self.value(x);
        if vx.shape() != target.shape() {
            return Err(Error::Shape {
                op: "masked_mse",
                lhs: vx.shape(),
                rhs: target.shape(),
            });
        }
        if mask.len() != vx.len() {
            return Err(Error::Dimension(format!(
                "mask has {} cells, matrix has {}",
                mask.len(),
                vx.len()
            )));
        }
        let cells: Vec<usize> = (0..mask.len()).filter(|&c| mask[c]).collect();
        if cells.is_empty() {
            return Err(Error::DegenerateLoss("no known cells in mask".into()));
        }
        let targets: Vec<f64> = cells.iter().map(|&c| target.data()[c]).collect();
        let n = cells.len() as f64;
        let loss = cells
            .iter()
            .zip(&targets)
            .map(|(&c, &t)| (vx.data()[c] - t).powi(2))
            .sum::<f64>()
            / n;
        Ok(self.push(Matrix::filled(1, 1, loss), Op::MaskedMse { x, cells, targets }))
    }

    /// Mean over anti-diagonal groups of each group's population variance.
    pub fn diagonal_loss(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(&[x])?;
        let (l, m) = self.value(x).shape();
        let index = DiagonalIndex::new(m, l);
        let groups: Vec<Vec<usize>> = index.groups().to_vec();
        let loss = anti_diagonal_variance(self.value(x), &groups);
        Ok(self.push(Matrix::filled(1, 1, loss), Op::DiagonalLoss { x, groups }))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(&[x])?;
        let s = self.value(x).sum();
        Ok(self.push(Matrix::filled(1, 1, s), Op::Sum(x)))
    }

    pub fn sum_squares(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(&[x])?;
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        Ok(self.push(Matrix::filled(1, 1, s), Op::SumSquares(x)))
    }

    /// Clears accumulated gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Reverse-mode sweep from a scalar loss. Returns the gradient of every
    /// parameter; parameters with no path to the loss get exact zeros.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Graph(format!("unknown node {}", loss.0)));
        }
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this graph; call reset_grads first".into(),
            ));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.op.parents().iter().any(|p| p.0 >= idx) {
                return Err(Error::Graph(format!(
                    "node {idx} references a later node; cycle in graph"
                )));
            }
        }

        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            for (parent, g) in self.local_grads(node, &upstream)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
            grads[idx] = Some(upstream);
        }

        let mut by_name = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.param {
                let g = grads[idx]
                    .clone()
                    .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()));
                by_name.insert(name.clone(), g);
            }
        }
        self.grads = grads;
        self.backward_done = true;
        Ok(Gradients { by_name })
    }

    fn local_grads(&self, node: &Node, up: &Matrix) -> Result<Vec<(NodeId, Matrix)>> {
        let out = match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut v = Vec::with_capacity(2);
                if self.nodes[a.0].requires_grad {
                    v.push((*a, up.matmul(&vb.transpose())?));
                }
                if self.nodes[b.0].requires_grad {
                    v.push((*b, va.transpose().matmul(up)?));
                }
                v
            }
            Op::Transpose(a) => vec![(*a, up.transpose())],
            Op::Add(a, b) => vec![(*a, up.clone()), (*b, up.clone())],
            Op::AddBias(x, b) => {
                let db = Matrix::from_fn(up.rows(), 1, |i, _| up.row(i).iter().sum());
                vec![(*x, up.clone()), (*b, db)]
            }
            Op::AddScalar(x) => vec![(*x, up.clone())],
            Op::Scale(x, s) => vec![(*x, up.scale(*s))],
            Op::Relu(x) => {
                let vx = self.value(*x);
                vec![(*x, up.zip_map(vx, |g, v| if v > 0.0 { g } else { 0.0 })?)]
            }
            Op::MulConst(x, mask) => vec![(*x, up.zip_map(mask, |g, m| g * m)?)],
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let vg = self.value(*gamma);
                let (h, m) = normalized.shape();
                let mut dx = Matrix::zeros(h, m);
                let mut dgamma = Matrix::zeros(h, 1);
                let mut dbeta = Matrix::zeros(h, 1);
                for j in 0..m {
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for i in 0..h {
                        let g = up.get(i, j);
                        let xhat = normalized.get(i, j);
                        let d = g * vg.get(i, 0);
                        mean_d += d;
                        mean_dx += d * xhat;
                        dgamma.set(i, 0, dgamma.get(i, 0) + g * xhat);
                        dbeta.set(i, 0, dbeta.get(i, 0) + g);
                    }
                    mean_d /= h as f64;
                    mean_dx /= h as f64;
                    for i in 0..h {
                        let xhat = normalized.get(i, j);
                        let d = up.get(i, j) * vg.get(i, 0);
                        dx.set(i, j, inv_std[j] * (d - mean_d - xhat * mean_dx));
                    }
                }
                vec![(*x, dx), (*gamma, dgamma), (*beta, dbeta)]
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let (r, c) = y.shape();
                let mut dx = Matrix::zeros(r, c);
                for i in 0..r {
                    let dot: f64 = (0..c).map(|j| up.get(i, j) * y.get(i, j)).sum();
                    for j in 0..c {
                        dx.set(i, j, y.get(i, j) * (up.get(i, j) - dot));
                    }
                }
                vec![(*x, dx)]
            }
            Op::MaskedMse { x, cells, targets } => {
                let g = up.data()[0];
                let vx = self.value(*x);
                let n = cells.len() as f64;
                let mut dx = Matrix::zeros(vx.rows(), vx.cols());
                for (&c, &t) in cells.iter().zip(targets) {
                    dx.data_mut()[c] = g * 2.0 * (vx.data()[c] - t) / n;
                }
                vec![(*x, dx)]
            }
            Op::DiagonalLoss { x, groups } => {
                let g = up.data()[0];
                let vx = self.value(*x);
                let k = groups.len() as f64;
                let mut dx = Matrix::zeros(vx.rows(), vx.cols());
                for group in groups {
                    let n = group.len() as f64;
                    let mean = group.iter().map(|&c| vx.data()[c]).sum::<f64>() / n;
                    for &c in group {
                        dx.data_mut()[c] = g * 2.0 * (vx.data()[c] - mean) / (n * k);
                    }
                }
                vec![(*x, dx)]
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                vec![(*x, Matrix::filled(r, c, up.data()[0]))]
            }
            Op::SumSquares(x) => {
                let g = up.data()[0];
                vec![(*x, self.value(*x).scale(2.0 * g))]
            }
        };
        Ok(out)
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_node(value, op, None, requires_grad)
    }

    fn push_node(&mut self, value: Matrix, op: Op, param: Option<String>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            param,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, ids: &[NodeId]) -> Result<()> {
        if let Some(bad) = ids.iter().find(|id| id.0 >= self.nodes.len()) {
            return Err(Error::Graph(format!("unknown node {}", bad.0)));
        }
        Ok(())
    }
}

/// `(1/|K|) Σ_k (1/n_k) Σ_i (x_{k,i} − mean_k)²` over the given cell groups.
pub(crate) fn anti_diagonal_variance(x: &Matrix, groups: &[Vec<usize>]) -> f64 {
    if groups.is_empty() {
        return 0.0;
    }
    let total: f64 = groups
        .iter()
        .map(|group| {
            let n = group.len() as f64;
            let pivot = x.data()[group[0]];
            let mean = group.iter().map(|&c| x.data()[c] - pivot).sum::<f64>() / n;
            group.iter().map(|&c| (x.data()[c] - pivot - mean).powi(2)).sum::<f64>() / n
        })
        .sum();
    total / groups.len() as f64
}
