//! Reference implementation of a sparse mixture-of-experts transformer stack:
//! gated local/global grouped-query attention, sigmoid-routed experts with
//! bias-based load balancing, depth-scaled sandwich normalization, and the
//! random sequential document buffer for sequence packing.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! gradient checks and training loop use.

pub mod attention;
pub mod datapipe;
pub mod error;
pub mod model;
pub mod moe;
pub mod numerics;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = numerics::Tensor<f64>;
pub type Tape = numerics::Tape<f64>;
pub type TensorF32 = numerics::Tensor<f32>;

pub type AttentionWeights = attention::AttentionWeights<f64>;
pub type MoeWeights = moe::MoeWeights<f64>;
pub type ModelWeights = model::ModelWeights<f64>;
pub use moe::RouterState;
