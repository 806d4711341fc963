//! Optimal-transport knowledge distillation for local-prediction pose
//! networks.
//!
//! Student and teacher predictions (per-cell keypoint votes or dense
//! binary-code probabilities, each with a segmentation score) are turned
//! into weighted point clouds and compared with a debiased, KL-relaxed
//! entropic transport divergence. Exact oracles, analytic gradients and a
//! synthetic distillation harness come with it.

pub mod cli;
pub mod distill;
pub mod error;
pub mod harness;
pub mod io;
pub mod oracle;
pub mod ot;
pub mod points;
pub mod prediction;
pub mod threads;

pub use error::{Error, Result};
pub use points::{normalize_weights, WeightMode, WeightedPointSet};
