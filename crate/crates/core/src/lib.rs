//! KAN-Mamba fusion network for binary image segmentation.
//!
//! Everything runs on the crate's own reverse-mode autodiff core in
//! [`tensor`]; the layers, model, losses, metrics and training loop are
//! built on its primitives.

pub mod checks;
pub mod error;
pub mod kan;
pub mod model;
pub mod nn;
pub mod objective;
pub mod pipeline;
pub mod ssm;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, Scalar, Tensor, Var};
