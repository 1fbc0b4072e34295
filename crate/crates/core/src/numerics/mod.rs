//! Minimal dense-tensor kernel with hand-written reverse-mode gradients.

mod gradcheck;
pub mod ops;
mod params;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, GRAD_CHECK_FLOOR};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::{Scalar, Tensor};
