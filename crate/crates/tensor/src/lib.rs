//! Minimal dense-tensor numeric core with reverse-mode automatic
//! differentiation.
//!
//! The [`Tape`] records every operation applied to [`Var`] handles; calling
//! [`Tape::backward`] on a scalar loss accumulates gradients for every node,
//! summed over all paths. The op set is exactly what small recurrent models
//! need: elementwise arithmetic, matrix products, concatenation/slicing,
//! tanh/sigmoid, masked softmax, embedding-row lookup, and negative
//! log-likelihood.
//!
//! Element precision is generic over [`Scalar`] (`f32` or `f64`); gradient
//! checks run at 64-bit, training defaults to 32-bit.

mod error;
mod scalar;
mod tensor;

pub mod checkpoint;
pub mod optim;
pub mod rng;
pub mod tape;

pub use error::{CheckpointError, TensorError};
pub use scalar::{Dtype, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Crate-wide result alias.
pub type Result<T, E = TensorError> = std::result::Result<T, E>;
