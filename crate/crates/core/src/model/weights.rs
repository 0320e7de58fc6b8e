use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionVars, AttentionWeights};
use crate::error::{Error, Result};
use crate::model::config::{FfnKind, ModelConfig};
use crate::moe::{ExpertVars, ExpertWeights, MoeVars, MoeWeights};
use crate::numerics::{Tape, Tensor, TruncatedNormal, Var};
use crate::scalar::Scalar;

/// `(input-norm gain, output-norm gain) = (1, 1/√L)`.
pub fn init_norm_gains(layers: usize) -> Result<(f64, f64)> {
    if layers == 0 {
        return Err(Error::Parameter("layer count must be >= 1".into()));
    }
    Ok((1.0, 1.0 / (layers as f64).sqrt()))
}

#[derive(Clone, Debug, PartialEq)]
pub enum FfnWeights<T> {
    Dense(ExpertWeights<T>),
    Moe(MoeWeights<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights<T> {
    pub attn_norm_in: Tensor<T>,
    pub attn_norm_out: Tensor<T>,
    pub attn: AttentionWeights<T>,
    pub ffn_norm_in: Tensor<T>,
    pub ffn_norm_out: Tensor<T>,
    pub ffn: FfnWeights<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T> {
    pub embed: Tensor<T>,
    pub blocks: Vec<BlockWeights<T>>,
    pub final_norm: Tensor<T>,
    pub unembed: Tensor<T>,
}

#[derive(Clone, Debug)]
pub enum FfnVars {
    Dense(ExpertVars),
    Moe(MoeVars),
}

#[derive(Clone, Debug)]
pub struct BlockVars {
    pub attn_norm_in: Var,
    pub attn_norm_out: Var,
    pub attn: AttentionVars,
    pub ffn_norm_in: Var,
    pub ffn_norm_out: Var,
    pub ffn: FfnVars,
}

#[derive(Clone, Debug)]
pub struct ModelVars {
    pub embed: Var,
    pub blocks: Vec<BlockVars>,
    pub final_norm: Var,
    pub unembed: Var,
}

impl ModelVars {
    /// Leaves in [`ModelWeights::named`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.embed];
        for b in &self.blocks {
            v.extend([b.attn_norm_in, b.attn_norm_out]);
            v.extend(b.attn.all());
            v.extend([b.ffn_norm_in, b.ffn_norm_out]);
            match &b.ffn {
                FfnVars::Dense(e) => v.extend([e.gate, e.up, e.down]),
                FfnVars::Moe(m) => v.extend(m.all()),
            }
        }
        v.extend([self.final_norm, self.unembed]);
        v
    }
}

impl<T: Scalar> ModelWeights<T> {
    /// Truncated-normal matrices with `σ = 0.5/√d`, depth-scaled output norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let dist = TruncatedNormal::new(cfg.computed_sigma())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let (g_in, g_out) = init_norm_gains(cfg.layers)?;
        let gain = |g: f64| Tensor::full(vec![d], T::of(g));
        let embed = dist.sample_tensor(vec![cfg.vocab_size, d], &mut rng);
        let mut blocks = Vec::with_capacity(cfg.layers);
        for spec in cfg.blocks() {
            let attn =
                AttentionWeights::init(&cfg.attention_config(spec.attention), &dist, &mut rng);
            let ffn = match spec.ffn {
                FfnKind::Dense => {
                    FfnWeights::Dense(ExpertWeights::init(d, cfg.ffn_dim, &dist, &mut rng))
                }
                FfnKind::Moe => {
                    FfnWeights::Moe(MoeWeights::init(d, &cfg.moe_config(), &dist, &mut rng))
                }
            };
            blocks.push(BlockWeights {
                attn_norm_in: gain(g_in),
                attn_norm_out: gain(g_out),
                attn,
                ffn_norm_in: gain(g_in),
                ffn_norm_out: gain(g_out),
                ffn,
            });
        }
        let unembed = dist.sample_tensor(vec![d, cfg.vocab_size], &mut rng);
        Ok(Self {
            embed,
            blocks,
            final_norm: gain(1.0),
            unembed,
        })
    }

    fn push_expert<'a>(
        out: &mut Vec<(String, &'a Tensor<T>)>,
        prefix: String,
        e: &'a ExpertWeights<T>,
    ) {
        for (n, t) in ["gate", "up", "down"].iter().zip(e.tensors()) {
            out.push((format!("{prefix}.{n}"), t));
        }
    }

    /// Every parameter with its checkpoint name, matching [`ModelConfig::parameter_shapes`].
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("embed".to_string(), &self.embed)];
        for (l, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{l}");
            out.push((format!("{p}.attn_norm_in"), &b.attn_norm_in));
            out.push((format!("{p}.attn_norm_out"), &b.attn_norm_out));
            for (n, t) in AttentionWeights::<T>::NAMES.iter().zip(b.attn.tensors()) {
                out.push((format!("{p}.attn.{n}"), t));
            }
            out.push((format!("{p}.ffn_norm_in"), &b.ffn_norm_in));
            out.push((format!("{p}.ffn_norm_out"), &b.ffn_norm_out));
            match &b.ffn {
                FfnWeights::Dense(e) => Self::push_expert(&mut out, format!("{p}.ffn.dense"), e),
                FfnWeights::Moe(m) => {
                    out.push((format!("{p}.ffn.router"), &m.router));
                    for (i, e) in m.routed.iter().enumerate() {
                        Self::push_expert(&mut out, format!("{p}.ffn.routed.{i}"), e);
                    }
                    for (i, e) in m.shared.iter().enumerate() {
                        Self::push_expert(&mut out, format!("{p}.ffn.shared.{i}"), e);
                    }
                }
            }
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out.push(("unembed".to_string(), &self.unembed));
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    /// Mutable parameters in [`Self::named`] order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.embed];
        for b in &mut self.blocks {
            v.push(&mut b.attn_norm_in);
            v.push(&mut b.attn_norm_out);
            v.extend(b.attn.tensors_mut());
            v.push(&mut b.ffn_norm_in);
            v.push(&mut b.ffn_norm_out);
            match &mut b.ffn {
                FfnWeights::Dense(e) => v.extend(e.tensors_mut()),
                FfnWeights::Moe(m) => v.extend(m.tensors_mut()),
            }
        }
        v.push(&mut self.final_norm);
        v.push(&mut self.unembed);
        v
    }

    /// Rebuilds weights from tensors in [`Self::named`] order.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let shapes = cfg.parameter_shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked");
        let embed = next();
        let mut blocks = Vec::with_capacity(cfg.layers);
        for spec in cfg.blocks() {
            let attn_norm_in = next();
            let attn_norm_out = next();
            let attn = AttentionWeights {
                w_q: next(),
                w_k: next(),
                w_v: next(),
                w_g: next(),
                w_o: next(),
                q_gain: next(),
                k_gain: next(),
            };
            let ffn_norm_in = next();
            let ffn_norm_out = next();
            let ffn = match spec.ffn {
                FfnKind::Dense => FfnWeights::Dense(take_expert(&mut next)),
                FfnKind::Moe => {
                    let router = next();
                    let routed = (0..cfg.n_routed).map(|_| take_expert(&mut next)).collect();
                    let shared = (0..cfg.n_shared).map(|_| take_expert(&mut next)).collect();
                    FfnWeights::Moe(MoeWeights {
                        router,
                        routed,
                        shared,
                    })
                }
            };
            blocks.push(BlockWeights {
                attn_norm_in,
                attn_norm_out,
                attn,
                ffn_norm_in,
                ffn_norm_out,
                ffn,
            });
        }
        let final_norm = next();
        let unembed = next();
        Ok(Self {
            embed,
            blocks,
            final_norm,
            unembed,
        })
    }

    pub fn record(&self, tape: &mut Tape<T>) -> ModelVars {
        let embed = tape.leaf(self.embed.clone());
        let blocks = self
            .blocks
            .iter()
            .map(|b| BlockVars {
                attn_norm_in: tape.leaf(b.attn_norm_in.clone()),
                attn_norm_out: tape.leaf(b.attn_norm_out.clone()),
                attn: b.attn.record(tape),
                ffn_norm_in: tape.leaf(b.ffn_norm_in.clone()),
                ffn_norm_out: tape.leaf(b.ffn_norm_out.clone()),
                ffn: match &b.ffn {
                    FfnWeights::Dense(e) => FfnVars::Dense(e.record(tape)),
                    FfnWeights::Moe(m) => FfnVars::Moe(m.record(tape)),
                },
            })
            .collect();
        ModelVars {
            embed,
            blocks,
            final_norm: tape.leaf(self.final_norm.clone()),
            unembed: tape.leaf(self.unembed.clone()),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }
}

fn take_expert<T>(next: &mut impl FnMut() -> Tensor<T>) -> ExpertWeights<T> {
    ExpertWeights {
        gate: next(),
        up: next(),
        down: next(),
    }
}

/// Rebuilds the variable structure from a flat leaf list in [`ModelVars::all`] order.
pub fn vars_from_slice(cfg: &ModelConfig, vars: &[Var]) -> ModelVars {
    let mut i = 0;
    let mut next = || {
        i += 1;
        vars[i - 1]
    };
    let embed = next();
    let blocks = cfg
        .blocks()
        .into_iter()
        .map(|spec| {
            let attn_norm_in = next();
            let attn_norm_out = next();
            let attn = AttentionVars {
                w_q: next(),
                w_k: next(),
                w_v: next(),
                w_g: next(),
                w_o: next(),
                q_gain: next(),
                k_gain: next(),
            };
            let ffn_norm_in = next();
            let ffn_norm_out = next();
            let ffn = match spec.ffn {
                FfnKind::Dense => FfnVars::Dense(ExpertVars {
                    gate: next(),
                    up: next(),
                    down: next(),
                }),
                FfnKind::Moe => {
                    let n = 1 + 3 * (cfg.n_routed + cfg.n_shared);
                    let flat: Vec<Var> = (0..n).map(|_| next()).collect();
                    FfnVars::Moe(MoeVars::from_slice(&flat, cfg.n_routed, cfg.n_shared))
                }
            };
            BlockVars {
                attn_norm_in,
                attn_norm_out,
                attn,
                ffn_norm_in,
                ffn_norm_out,
                ffn,
            }
        })
        .collect();
    ModelVars {
        embed,
        blocks,
        final_norm: next(),
        unembed: next(),
    }
}
