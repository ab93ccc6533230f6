//! Minimal dense-matrix computation graph with reverse-mode gradients.
//!
//! Only the kernels the forecasting networks need are provided: affine maps,
//! layer normalization, ReLU, inverted dropout, single-head self-attention
//! and the two training losses (masked MSE and anti-diagonal variance).
//! Everything runs in `f64`.

pub mod gradcheck;
mod graph;
mod matrix;

pub use graph::{AttentionWeights, Gradients, Graph, NodeId};
pub(crate) use graph::anti_diagonal_variance;
pub use matrix::Matrix;
