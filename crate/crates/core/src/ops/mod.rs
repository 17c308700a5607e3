//! Differentiable operations, implemented as methods on [`crate::Var`].

mod conv;
mod elementwise;
mod matmul;
mod norm;
mod resample;
mod shape;

pub use elementwise::BinaryKind;
pub(crate) use norm::check_nonzero_scales;
pub use resample::reflect_index;
pub use shape::{concat, concat_tensors, permute_tensor};
