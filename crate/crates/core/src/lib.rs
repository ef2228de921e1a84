//! From-scratch CNN framework for retinal OCT classification.
//!
//! - [`tensor`]: NHWC tensors and numeric kernels
//! - [`nn`]: layers with forward/backward, loss, gradient checking
//! - [`model`]: network graphs and the four architecture builders
//! - [`data`]: directory scanning, decoding, augmentation, batching
//! - [`train`]: optimizers, the epoch loop, checkpoints
//! - [`eval`]: confusion matrices and classification metrics

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
