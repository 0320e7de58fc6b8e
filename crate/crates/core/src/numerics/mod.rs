//! Dense tensors, reverse-mode gradients and the finite-difference oracle.

pub mod gradcheck;
pub mod init;
pub mod ops;
pub mod tape;
pub mod tensor;

pub use gradcheck::{
    finite_difference_check, gradient_check, relative_error, Coords, GradCheckReport,
};
pub use init::{sample_truncated_normal, TruncatedNormal};
pub use tape::{Gradients, Primitive, Tape, Var};
pub use tensor::{matmul, rms_normalize, softmax_lastdim, Tensor};

/// Default RMSNorm epsilon.
pub const DEFAULT_NORM_EPS: f64 = 1e-6;
