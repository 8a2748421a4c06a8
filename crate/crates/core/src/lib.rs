//! Multi-label chest radiograph classification on a small reverse-mode
//! autodiff engine: CNN, ResNet and Vision Transformer families, training
//! with plateau scheduling, ROC/AUC evaluation and attention-map overlays.

// Index loops mirror the math in numeric kernels, and `!(x > 0.0)` is the
// deliberate NaN-rejecting form of validation checks.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod attnviz;
pub mod config;
pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
