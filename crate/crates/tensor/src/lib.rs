//! Small deterministic `f64` tensor library with reverse-mode automatic
//! differentiation, Adam, and a finite-difference gradient checker.
//!
//! Forward ops are recorded on a [`Tape`]; [`Tape::backward`] sweeps the tape
//! in reverse from a scalar loss and returns [`Gradients`].

mod adam;
mod error;
pub mod fixtures;
mod gemm;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{clip_global_norm, Adam, AdamConfig, AdamState};
pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_gradcheck, relative_error, GradcheckReport, RELATIVE_FLOOR};
pub use tape::{CustomOp, Gradients, Mask, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

#[cfg(test)]
mod op_tests;
