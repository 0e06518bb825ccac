//! Minimal dense-tensor arithmetic with reverse-mode differentiation.
//!
//! - [`Tensor`]: immutable row-major buffers in `f32` or `f64`.
//! - [`Tape`]: records a forward pass and sweeps it backward.
//! - [`ParamStore`]: named parameters, gradient accumulators and optimizer state.
//! - [`optim`], [`checkpoint`], [`gradcheck`]: training utilities built on the above.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod optim;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use error::{NumError, Result};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerKind};
pub use params::{Moments, ParamEntry, ParamId, ParamStore};
pub use scalar::{DType, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
