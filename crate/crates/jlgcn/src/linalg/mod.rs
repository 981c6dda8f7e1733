//! Deterministic dense linear algebra and elementary neural operations.

mod matrix;
mod rng;
mod scalar;

pub use matrix::{dot, exp_neg_domain, row_sum, DenseMatrix};
pub use rng::Rng;
pub use scalar::{Dtype, Scalar};
