//! Reverse-mode differentiation over dense 3D tensors.
//!
//! Every loss in the crate is assembled from [`Tape`] operations, so its
//! gradient with respect to displacement parameters comes from a single
//! reverse sweep. All arithmetic is `f64`.

mod gradcheck;
pub(crate) mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GRAD_CHECK_SAMPLES};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Dims, Tensor3};
