//! Minimal reverse-mode automatic differentiation over dense tensors.

mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, finite_diff_check_adaptive, finite_diff_check_coords, relative_error, AdaptiveCheck};
pub use ops::sigmoid_scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
