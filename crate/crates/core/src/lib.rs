//! Multi-task convolutional network training with structured filter pruning.
//!
//! A shared conv backbone feeds one head per task (segmentation, depth,
//! surface normals). Backbone filters are ranked either by the agreement of
//! their per-task gradients (CosPrune: summed pairwise cosine similarity) or
//! by first-order Taylor importance, and removed iteratively while the model
//! keeps fine-tuning on the total loss.

pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod pruning;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
