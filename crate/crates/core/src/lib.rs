//! Rewrites small ReLU MLPs as path-based models: a frozen path selector that
//! gates each input-to-output path by its activation pattern, followed by a
//! trainable linear estimator with one weight per retained path.
//!
//! Module map:
//!
//! - [`linalg`]: dense vectors/matrices and the seeded generator.
//! - [`dataset`]: CSV/IDX ingestion, teacher-generated data, splits.
//! - [`mlp`], [`loss`], [`train`]: the ReLU MLP, its losses, SGD and early stopping.
//! - [`paths`]: path enumeration, weights, indicators, norms, distances and
//!   the structural-change metric.
//! - [`glai`]: expansion, selector/estimator evaluation, pruning, parameter parity.
//! - [`pipeline`]: the two-phase procedure and the baseline comparison.

pub mod dataset;
pub mod error;
pub mod glai;
pub mod linalg;
pub mod loss;
pub mod mlp;
pub mod paths;
pub mod pipeline;
pub mod train;

pub use error::{Error, Result};
