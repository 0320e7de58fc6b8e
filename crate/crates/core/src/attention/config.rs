use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    /// Sliding-window attention with rotary embeddings.
    Local,
    /// Full causal attention without positional embeddings.
    Global,
}

/// `[local, local, local, global]` repeated from the first layer; a final
/// incomplete group is truncated.
pub fn layer_pattern(layers: usize) -> Vec<LayerKind> {
    (0..layers)
        .map(|l| {
            if l % 4 == 3 {
                LayerKind::Global
            } else {
                LayerKind::Local
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionLayerConfig {
    pub d_model: usize,
    pub heads_q: usize,
    pub heads_kv: usize,
    pub head_dim: usize,
    pub kind: LayerKind,
    pub window: usize,
    pub rope_theta: f64,
    pub intra_doc_masking: bool,
    pub norm_eps: f64,
}

impl AttentionLayerConfig {
    /// Config with `head_dim = d_model / heads_q` and default theta/eps.
    pub fn new(
        d_model: usize,
        heads_q: usize,
        heads_kv: usize,
        kind: LayerKind,
        window: usize,
    ) -> Result<Self> {
        if heads_q == 0 || d_model % heads_q != 0 {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible by heads_q {heads_q}"
            )));
        }
        let cfg = Self {
            d_model,
            heads_q,
            heads_kv,
            head_dim: d_model / heads_q,
            kind,
            window,
            rope_theta: 10_000.0,
            intra_doc_masking: false,
            norm_eps: crate::numerics::DEFAULT_NORM_EPS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Width of the concatenated head outputs, `heads_q * head_dim`.
    pub fn inner_dim(&self) -> usize {
        self.heads_q * self.head_dim
    }

    pub fn kv_dim(&self) -> usize {
        self.heads_kv * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads_q == 0 || self.heads_kv == 0 || self.head_dim == 0 {
            return Err(Error::Config(
                "attention dimensions must be positive".into(),
            ));
        }
        if self.heads_q % self.heads_kv != 0 {
            return Err(Error::Config(format!(
                "heads_q {} is not divisible by heads_kv {}",
                self.heads_q, self.heads_kv
            )));
        }
        if self.kind == LayerKind::Local {
            if self.window == 0 {
                return Err(Error::Config("local layers need window >= 1".into()));
            }
            if self.head_dim % 2 != 0 {
                return Err(Error::Config(format!(
                    "rotary embeddings need an even head_dim, got {}",
                    self.head_dim
                )));
            }
            if !(self.rope_theta > 0.0) {
                return Err(Error::Config("rope_theta must be positive".into()));
            }
        }
        if !(self.norm_eps >= 0.0) {
            return Err(Error::Config("norm_eps must be non-negative".into()));
        }
        Ok(())
    }
}

/// 1-based key/value head serving 1-based query head `i`: `ceil(i * h_kv / h_q)`.
pub fn kv_head_index(i: usize, heads_q: usize, heads_kv: usize) -> Result<usize> {
    if heads_kv == 0 || heads_q % heads_kv != 0 {
        return Err(Error::Config(format!(
            "heads_q {heads_q} is not divisible by heads_kv {heads_kv}"
        )));
    }
    if i == 0 || i > heads_q {
        return Err(Error::Parameter(format!(
            "query head {i} outside 1..={heads_q}"
        )));
    }
    Ok((i * heads_kv).div_ceil(heads_q))
}
