//! Grouped-query attention with QK-norm, rotary local layers, NoPE global
//! layers, sliding-window/intra-document masking and sigmoid output gating.

mod config;
mod layer;
mod mask;
mod rope;
mod sdpa;

pub use config::{kv_head_index, layer_pattern, AttentionLayerConfig, LayerKind};
pub use layer::{
    attention_forward, attention_forward_batch, gated_output, project_and_norm, AttentionVars,
    AttentionWeights,
};
pub use mask::{build_mask, AttentionMask, AttentionMaskSpec};
pub use rope::{apply_rope, rope_vector, Rope};
pub use sdpa::{sdpa, ScaledDotProductAttention};
