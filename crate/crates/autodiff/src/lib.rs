//! Dense `Real` tensors with a tape-based reverse-mode differentiator.
//!
//! Operations are methods on [`Tape`] taking and returning [`Var`] handles.
//! The operator set is deliberately small: what a 3D U-Net with a text
//! similarity head and a cross-attention refiner needs, and nothing else.

mod error;
mod gemm;
mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_at, CheckReport};
pub use ops::elementwise::sigmoid;
pub use ops::resize::half_pixel_source;
pub use tape::{BackwardCtx, Tape, Var};
pub use tensor::Tensor;

/// Scalar type of every tensor. `f64` unless built with `single-precision`.
#[cfg(not(feature = "single-precision"))]
pub type Real = f64;
#[cfg(feature = "single-precision")]
pub type Real = f32;

pub use ops::L2_NORM_FLOOR;
