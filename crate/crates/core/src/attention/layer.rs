use std::sync::Arc;

use rand::Rng;

use crate::attention::config::{AttentionLayerConfig, LayerKind};
use crate::attention::mask::AttentionMask;
use crate::attention::rope::apply_rope;
use crate::attention::sdpa::sdpa;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, TruncatedNormal, Var};
use crate::scalar::Scalar;

/// Projection matrices are stored input-major (`x · W`), so `w_q` is
/// `[d_model × heads_q·head_dim]` and `w_o` is `[heads_q·head_dim × d_model]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights<T> {
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_g: Tensor<T>,
    pub w_o: Tensor<T>,
    /// QK-norm gains, one `head_dim` vector shared by all query heads.
    pub q_gain: Tensor<T>,
    /// Shared by all key heads.
    pub k_gain: Tensor<T>,
}

/// The same weights recorded as tape leaves.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_g: Var,
    pub w_o: Var,
    pub q_gain: Var,
    pub k_gain: Var,
}

impl<T: Scalar> AttentionWeights<T> {
    pub const NAMES: [&'static str; 7] = ["w_q", "w_k", "w_v", "w_g", "w_o", "q_gain", "k_gain"];

    /// Parameter shapes in [`Self::NAMES`] order, without allocating.
    pub fn shapes(cfg: &AttentionLayerConfig) -> [Vec<usize>; 7] {
        let (d, inner, kv, dh) = (cfg.d_model, cfg.inner_dim(), cfg.kv_dim(), cfg.head_dim);
        [
            vec![d, inner],
            vec![d, kv],
            vec![d, kv],
            vec![d, inner],
            vec![inner, d],
            vec![dh],
            vec![dh],
        ]
    }

    pub fn init<R: Rng + ?Sized>(
        cfg: &AttentionLayerConfig,
        dist: &TruncatedNormal,
        rng: &mut R,
    ) -> Self {
        let [q, k, v, g, o, qg, kg] = Self::shapes(cfg);
        Self {
            w_q: dist.sample_tensor(q, rng),
            w_k: dist.sample_tensor(k, rng),
            w_v: dist.sample_tensor(v, rng),
            w_g: dist.sample_tensor(g, rng),
            w_o: dist.sample_tensor(o, rng),
            q_gain: Tensor::ones(qg),
            k_gain: Tensor::ones(kg),
        }
    }

    pub fn tensors(&self) -> [&Tensor<T>; 7] {
        [
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_g,
            &self.w_o,
            &self.q_gain,
            &self.k_gain,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 7] {
        [
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_g,
            &mut self.w_o,
            &mut self.q_gain,
            &mut self.k_gain,
        ]
    }

    pub fn check(&self, cfg: &AttentionLayerConfig) -> Result<()> {
        for ((name, t), shape) in Self::NAMES
            .iter()
            .zip(self.tensors())
            .zip(Self::shapes(cfg))
        {
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "attention weight {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn record(&self, tape: &mut Tape<T>) -> AttentionVars {
        AttentionVars {
            w_q: tape.leaf(self.w_q.clone()),
            w_k: tape.leaf(self.w_k.clone()),
            w_v: tape.leaf(self.w_v.clone()),
            w_g: tape.leaf(self.w_g.clone()),
            w_o: tape.leaf(self.w_o.clone()),
            q_gain: tape.leaf(self.q_gain.clone()),
            k_gain: tape.leaf(self.k_gain.clone()),
        }
    }

    /// Evaluates [`attention_forward`] without keeping the tape.
    pub fn forward(
        &self,
        x: &Tensor<T>,
        cfg: &AttentionLayerConfig,
        mask: Arc<AttentionMask>,
    ) -> Result<Tensor<T>> {
        self.check(cfg)?;
        let mut tape = Tape::new();
        let vars = self.record(&mut tape);
        let xv = tape.leaf(x.clone());
        let u = attention_forward(&mut tape, xv, cfg, &vars, mask)?;
        Ok(tape.value(u).clone())
    }
}

impl AttentionVars {
    pub fn all(&self) -> [Var; 7] {
        [
            self.w_q,
            self.w_k,
            self.w_v,
            self.w_g,
            self.w_o,
            self.q_gain,
            self.k_gain,
        ]
    }
}

/// Linear projections followed by per-head RMS normalization of queries and keys.
pub fn project_and_norm<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    cfg: &AttentionLayerConfig,
    w: &AttentionVars,
) -> Result<(Var, Var, Var)> {
    let rows = tape.value(x).rows();
    if tape.value(x).cols() != cfg.d_model {
        return Err(Error::dim(
            "project_and_norm",
            tape.value(x).shape(),
            &[rows, cfg.d_model],
        ));
    }
    let eps = T::of(cfg.norm_eps);
    let dh = cfg.head_dim;
    let head_norm = |tape: &mut Tape<T>, proj: Var, gain: Var, heads: usize| -> Result<Var> {
        let split = tape.reshape(proj, vec![rows * heads, dh])?;
        let normed = tape.rms_norm(split, gain, eps)?;
        tape.reshape(normed, vec![rows, heads * dh])
    };
    let q0 = tape.matmul(x, w.w_q)?;
    let k0 = tape.matmul(x, w.w_k)?;
    let v = tape.matmul(x, w.w_v)?;
    let q = head_norm(tape, q0, w.q_gain, cfg.heads_q)?;
    let k = head_norm(tape, k0, w.k_gain, cfg.heads_kv)?;
    Ok((q, k, v))
}

/// `W_O · (sdpa_out ⊙ σ(W_G x))`, the gate split into contiguous per-head chunks.
pub fn gated_output<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    sdpa_out: Var,
    w_g: Var,
    w_o: Var,
) -> Result<Var> {
    let logits = tape.matmul(x, w_g)?;
    let gate = tape.sigmoid(logits)?;
    let gated = tape.mul(sdpa_out, gate)?;
    tape.matmul(gated, w_o)
}

/// Full attention sublayer for the rows of `x`, laid out as described by `mask`.
pub fn attention_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    cfg: &AttentionLayerConfig,
    w: &AttentionVars,
    mask: Arc<AttentionMask>,
) -> Result<Var> {
    cfg.validate()?;
    if mask.len() != tape.value(x).rows() {
        return Err(Error::dim(
            "attention_forward mask",
            &[mask.len()],
            tape.value(x).shape(),
        ));
    }
    if mask.kind() != cfg.kind {
        return Err(Error::Config("mask kind does not match layer kind".into()));
    }
    let (q, k, v) = project_and_norm(tape, x, cfg, w)?;
    let (q, k) = match cfg.kind {
        LayerKind::Local => {
            let pos = Arc::new(mask.positions());
            let q = apply_rope(
                tape,
                q,
                pos.clone(),
                cfg.heads_q,
                cfg.head_dim,
                cfg.rope_theta,
            )?;
            let k = apply_rope(tape, k, pos, cfg.heads_kv, cfg.head_dim, cfg.rope_theta)?;
            (q, k)
        }
        LayerKind::Global => (q, k),
    };
    let o = sdpa(tape, q, k, v, mask, cfg.heads_q, cfg.heads_kv, cfg.head_dim)?;
    gated_output(tape, x, o, w.w_g, w.w_o)
}

/// Runs each sequence independently.
pub fn attention_forward_batch<T: Scalar>(
    xs: &[Tensor<T>],
    cfg: &AttentionLayerConfig,
    weights: &AttentionWeights<T>,
    doc_ids: Option<&[Vec<u32>]>,
) -> Result<Vec<Tensor<T>>> {
    xs.iter()
        .enumerate()
        .map(|(b, x)| {
            let docs = doc_ids.map(|d| d[b].clone());
            let mask = AttentionMask::batched(&[x.rows()], cfg.kind, cfg.window, docs)?;
            weights.forward(x, cfg, Arc::new(mask))
        })
        .collect()
}
