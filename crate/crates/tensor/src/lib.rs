//! Minimal dense tensors with a reverse-mode automatic differentiation tape.
//!
//! Values live in [`Tensor`]; every differentiable computation is recorded on
//! a single-use [`Tape`] whose [`Tape::backward`] consumes it and returns the
//! [`Gradients`] of all leaves and parameters that require them. Parameters
//! are owned by a [`ParamStore`] outside the tape so one set of weights can be
//! shared by many tapes (one per training example or per thread).

mod checkpoint;
mod error;
pub mod gradcheck;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_params, GradCheckReport, Mismatch};
pub use params::{Gradients, ParamEntry, ParamId, ParamStore};
pub use scalar::{DType, Real};
pub use tape::{BackwardFn, Tape, Var};
pub use tensor::Tensor;
