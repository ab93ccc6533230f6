//! Short-horizon forecasting of gridded spatiotemporal fields.
//!
//! A window of neighbouring grid cells is embedded as an initial attractor,
//! mapped by a neural network onto the delay embedding of one target cell,
//! and the unknown future of that cell is read off the anti-diagonals of the
//! predicted delay matrix.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decompose;
pub mod diffengine;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod model;
pub mod selftest;
pub mod training;

pub use error::{Error, Result};
