use serde::{Deserialize, Serialize};

use crate::attention::{layer_pattern, AttentionLayerConfig, LayerKind};
use crate::error::{Error, Result};
use crate::moe::{BalancerKind, BalancerParams, MoeConfig};

/// Whole-model hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub layers: usize,
    /// Leading layers that use a dense SwiGLU FFN instead of the MoE.
    pub dense_first: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    pub heads_q: usize,
    pub head_dim: usize,
    pub heads_kv: usize,
    pub window: usize,
    pub seq_len: usize,
    pub vocab_size: usize,
    pub n_shared: usize,
    pub n_routed: usize,
    pub top_k: usize,
    pub route_scale: f64,
    pub expert_dim: usize,
    /// Init standard deviation as written in the config, usually rounded.
    pub init_sigma: f64,
    pub z_loss_weight: f64,
    pub aux_alpha: f64,
    pub rope_theta: f64,
    pub norm_eps: f64,
    pub intra_doc_masking: bool,
    pub balancer: BalancerKind,
    pub balancer_params: BalancerParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FfnKind {
    Dense,
    Moe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub index: usize,
    pub attention: LayerKind,
    pub ffn: FfnKind,
}

pub const PRESET_NAMES: [&str; 4] = ["trinity-nano", "trinity-mini", "trinity-large", "tiny"];

fn preset_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "trinity-nano" => include_str!("../../presets/trinity-nano.toml"),
        "trinity-mini" => include_str!("../../presets/trinity-mini.toml"),
        "trinity-large" => include_str!("../../presets/trinity-large.toml"),
        "tiny" => include_str!("../../presets/tiny.toml"),
        _ => return None,
    })
}

/// Number of digits after the decimal point in the shortest representation of `x`.
fn printed_decimals(x: f64) -> usize {
    let s = format!("{x}");
    s.split_once('.').map_or(0, |(_, frac)| frac.len())
}

fn round_to(x: f64, decimals: usize) -> f64 {
    let p = 10f64.powi(decimals as i32);
    (x * p).round() / p
}

impl ModelConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let src = preset_source(name).ok_or_else(|| {
            Error::Config(format!("unknown preset {name:?}; known: {PRESET_NAMES:?}"))
        })?;
        Self::from_toml(src)
    }

    pub fn tiny() -> Self {
        Self::preset("tiny").expect("bundled preset is valid")
    }

    pub fn from_toml(src: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// `0.5 / √d_model`, used for every initialization.
    pub fn computed_sigma(&self) -> f64 {
        0.5 / (self.d_model as f64).sqrt()
    }

    /// Whether the configured sigma equals the computed one at the configured precision.
    pub fn sigma_matches(&self) -> bool {
        let decimals = printed_decimals(self.init_sigma);
        round_to(self.computed_sigma(), decimals) == self.init_sigma
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("ffn_dim", self.ffn_dim),
            ("heads_q", self.heads_q),
            ("head_dim", self.head_dim),
            ("heads_kv", self.heads_kv),
            ("window", self.window),
            ("seq_len", self.seq_len),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.dense_first > self.layers {
            return Err(Error::Config(format!(
                "dense_first {} exceeds layers {}",
                self.dense_first, self.layers
            )));
        }
        if !self.sigma_matches() {
            return Err(Error::Config(format!(
                "init_sigma {} does not match 0.5/sqrt(d_model) = {:.6}",
                self.init_sigma,
                self.computed_sigma()
            )));
        }
        if !(self.z_loss_weight >= 0.0) {
            return Err(Error::Config("z_loss_weight must be >= 0".into()));
        }
        self.attention_config(LayerKind::Local).validate()?;
        if self.dense_first < self.layers {
            self.moe_config().validate()?;
        }
        Ok(())
    }

    pub fn attention_config(&self, kind: LayerKind) -> AttentionLayerConfig {
        AttentionLayerConfig {
            d_model: self.d_model,
            heads_q: self.heads_q,
            heads_kv: self.heads_kv,
            head_dim: self.head_dim,
            kind,
            window: self.window,
            rope_theta: self.rope_theta,
            intra_doc_masking: self.intra_doc_masking,
            norm_eps: self.norm_eps,
        }
    }

    pub fn moe_config(&self) -> MoeConfig {
        MoeConfig {
            n_routed: self.n_routed,
            n_shared: self.n_shared,
            top_k: self.top_k,
            expert_dim: self.expert_dim,
            route_scale: self.route_scale,
            aux_alpha: self.aux_alpha,
            balancer: self.balancer,
        }
    }

    pub fn blocks(&self) -> Vec<BlockSpec> {
        layer_pattern(self.layers)
            .into_iter()
            .enumerate()
            .map(|(index, attention)| BlockSpec {
                index,
                attention,
                ffn: if index < self.dense_first {
                    FfnKind::Dense
                } else {
                    FfnKind::Moe
                },
            })
            .collect()
    }

    pub fn moe_layers(&self) -> usize {
        self.layers - self.dense_first
    }

    /// Every parameter name and shape, in checkpoint order, without allocating weights.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, v) = (self.d_model, self.vocab_size);
        let attn = self.attention_config(LayerKind::Local);
        let mut out = vec![("embed".to_string(), vec![v, d])];
        for b in self.blocks() {
            let p = format!("blocks.{}", b.index);
            out.push((format!("{p}.attn_norm_in"), vec![d]));
            out.push((format!("{p}.attn_norm_out"), vec![d]));
            let shapes = crate::attention::AttentionWeights::<f64>::shapes(&attn);
            for (n, s) in crate::attention::AttentionWeights::<f64>::NAMES
                .iter()
                .zip(shapes)
            {
                out.push((format!("{p}.attn.{n}"), s));
            }
            out.push((format!("{p}.ffn_norm_in"), vec![d]));
            out.push((format!("{p}.ffn_norm_out"), vec![d]));
            let expert = |out: &mut Vec<(String, Vec<usize>)>, prefix: String, hidden: usize| {
                out.push((format!("{prefix}.gate"), vec![d, hidden]));
                out.push((format!("{prefix}.up"), vec![d, hidden]));
                out.push((format!("{prefix}.down"), vec![hidden, d]));
            };
            match b.ffn {
                FfnKind::Dense => expert(&mut out, format!("{p}.ffn.dense"), self.ffn_dim),
                FfnKind::Moe => {
                    out.push((format!("{p}.ffn.router"), vec![d, self.n_routed]));
                    for e in 0..self.n_routed {
                        expert(&mut out, format!("{p}.ffn.routed.{e}"), self.expert_dim);
                    }
                    for e in 0..self.n_shared {
                        expert(&mut out, format!("{p}.ffn.shared.{e}"), self.expert_dim);
                    }
                }
            }
        }
        out.push(("final_norm".to_string(), vec![d]));
        out.push(("unembed".to_string(), vec![d, v]));
        out
    }

    pub fn parameter_count(&self) -> u64 {
        self.parameter_shapes()
            .iter()
            .map(|(_, s)| s.iter().map(|&x| x as u64).product::<u64>())
            .sum()
    }

    /// Parameters touched per token: everything except the unselected routed experts.
    pub fn active_parameter_count(&self) -> u64 {
        let expert = 3 * (self.d_model * self.expert_dim) as u64;
        let idle = (self.n_routed - self.top_k.min(self.n_routed)) as u64;
        self.parameter_count() - self.moe_layers() as u64 * idle * expert
    }
}

/// Optimization settings for the smoke trainer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    /// Learning rate at the last step as a fraction of the peak.
    pub final_lr_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 4,
            lr: 3e-3,
            warmup_steps: 20,
            final_lr_fraction: 0.1,
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            grad_clip: 1.0,
        }
    }
}

/// A config file: model fields at the top level plus an optional `[train]` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(src: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn preset(name: &str) -> Result<Self> {
        Ok(Self {
            model: ModelConfig::preset(name)?,
            train: TrainConfig::default(),
        })
    }
}
