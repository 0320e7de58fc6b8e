use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::attention::{attention_forward, AttentionMask, LayerKind};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::weights::{FfnVars, ModelVars, ModelWeights};
use crate::moe::{moe_sublayer, seq_aux_loss, swiglu_expert, LoadStats, RouterState, Routing};
use crate::numerics::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// `y = x + N_out(sublayer(N_in(x)))` with RMS norms over the last axis.
pub fn sandwich_block<T: Scalar, F>(
    tape: &mut Tape<T>,
    x: Var,
    gain_in: Var,
    gain_out: Var,
    eps: T,
    sublayer: F,
) -> Result<Var>
where
    F: FnOnce(&mut Tape<T>, Var) -> Result<Var>,
{
    let h = tape.rms_norm(x, gain_in, eps)?;
    let m = sublayer(tape, h)?;
    let n = tape.rms_norm(m, gain_out, eps)?;
    tape.add(x, n)
}

/// `√d · E[ids]`
pub fn embed<T: Scalar>(tape: &mut Tape<T>, table: Var, ids: &[usize]) -> Result<Var> {
    let (vocab, d) = (tape.value(table).rows(), tape.value(table).cols());
    if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
        return Err(Error::Lookup(format!(
            "token id {bad} outside vocabulary of {vocab}"
        )));
    }
    let rows = tape.gather_rows(table, ids.to_vec())?;
    tape.scale(rows, T::of_usize(d).sqrt())
}

/// Plain-value [`embed`].
pub fn embed_value<T: Scalar>(table: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let t = tape.leaf(table.clone());
    let e = embed(&mut tape, t, ids)?;
    Ok(tape.value(e).clone())
}

/// `logits = RMSNorm(h) · U`
pub fn final_head<T: Scalar>(
    tape: &mut Tape<T>,
    h: Var,
    gain: Var,
    unembed: Var,
    eps: T,
) -> Result<Var> {
    let n = tape.rms_norm(h, gain, eps)?;
    tape.matmul(n, unembed)
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub ce: Var,
    /// Unweighted `mean(lse²)`.
    pub z: Var,
}

/// Mean cross-entropy + `z_weight · mean(logsumexp²)` + the given auxiliary losses.
pub fn training_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    targets: &[usize],
    z_weight: f64,
    aux: &[Var],
) -> Result<LossParts> {
    let ce = tape.cross_entropy(logits, targets.to_vec())?;
    let lse = tape.logsumexp_rows(logits)?;
    let sq = tape.square(lse)?;
    let z = tape.mean(sq)?;
    let zw = tape.scale(z, T::of(z_weight))?;
    let mut terms = vec![ce, zw];
    terms.extend_from_slice(aux);
    let total = tape.add_all(&terms)?;
    Ok(LossParts { total, ce, z })
}

/// Plain-value [`training_loss`].
pub fn training_loss_value<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
    z_weight: f64,
    aux: &[T],
) -> Result<T> {
    let mut tape = Tape::new();
    let l = tape.leaf(logits.clone());
    let aux: Vec<Var> = aux.iter().map(|&a| tape.leaf(Tensor::scalar(a))).collect();
    let parts = training_loss(&mut tape, l, targets, z_weight, &aux)?;
    Ok(tape.value(parts.total).item())
}

/// Next-token prediction batch; row blocks are independent sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
    /// Document id per input position, used when intra-document masking is on.
    pub doc_ids: Option<Vec<Vec<u32>>>,
}

impl Batch {
    /// Shifts each token sequence by one to form inputs and targets.
    pub fn next_token(sequences: &[Vec<usize>]) -> Result<Self> {
        if sequences.is_empty() || sequences.iter().any(|s| s.len() < 2) {
            return Err(Error::Parameter(
                "each sequence needs at least two tokens".into(),
            ));
        }
        Ok(Self {
            inputs: sequences
                .iter()
                .map(|s| s[..s.len() - 1].to_vec())
                .collect(),
            targets: sequences.iter().map(|s| s[1..].to_vec()).collect(),
            doc_ids: None,
        })
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.inputs.iter().map(Vec::len).collect()
    }

    pub fn tokens(&self) -> usize {
        self.inputs.iter().map(Vec::len).sum()
    }

    fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.inputs.is_empty() || self.inputs.len() != self.targets.len() {
            return Err(Error::Parameter(
                "batch inputs and targets must pair up".into(),
            ));
        }
        for (i, t) in self.inputs.iter().zip(&self.targets) {
            if i.is_empty() || i.len() != t.len() {
                return Err(Error::Parameter("input and target lengths differ".into()));
            }
            if i.len() > cfg.seq_len {
                return Err(Error::Parameter(format!(
                    "sequence of {} tokens exceeds seq_len {}",
                    i.len(),
                    cfg.seq_len
                )));
            }
        }
        if let Some(d) = &self.doc_ids {
            if d.iter().map(Vec::len).ne(self.inputs.iter().map(Vec::len)) {
                return Err(Error::Parameter(
                    "doc ids must cover every input position".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoeLayerMetrics {
    pub layer: usize,
    pub stats: LoadStats,
    pub max_vio: f64,
    pub aux_loss: f64,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub loss: Var,
    pub logits: Var,
    pub ce: f64,
    pub z_term: f64,
    pub aux_total: f64,
    pub moe: Vec<MoeLayerMetrics>,
    pub routings: Vec<Routing>,
    pub mean_abs_lse: f64,
    pub max_logit: f64,
}

/// Embedding, `L` sandwich blocks, final norm and head, and the training loss.
///
/// `states` holds one router state per MoE layer. `frozen`, if given, fixes the
/// expert selection of every MoE layer.
pub fn model_forward<T: Scalar>(
    tape: &mut Tape<T>,
    batch: &Batch,
    cfg: &ModelConfig,
    w: &ModelVars,
    states: &[RouterState],
    frozen: Option<&[Routing]>,
) -> Result<ForwardOutput> {
    batch.validate(cfg)?;
    if states.len() != cfg.moe_layers() {
        return Err(Error::Config(format!(
            "expected {} router states, got {}",
            cfg.moe_layers(),
            states.len()
        )));
    }
    if frozen.is_some_and(|f| f.len() != cfg.moe_layers()) {
        return Err(Error::Contract(
            "frozen routing needs one entry per MoE layer".into(),
        ));
    }
    let lengths = batch.lengths();
    let docs = if cfg.intra_doc_masking {
        batch.doc_ids.as_ref().map(|d| d.concat())
    } else {
        None
    };
    let local = Arc::new(AttentionMask::batched(
        &lengths,
        LayerKind::Local,
        cfg.window,
        docs.clone(),
    )?);
    let global = Arc::new(AttentionMask::batched(
        &lengths,
        LayerKind::Global,
        cfg.window,
        docs,
    )?);
    let eps = T::of(cfg.norm_eps);
    let moe_cfg = cfg.moe_config();

    let ids = batch.inputs.concat();
    let mut x = embed(tape, w.embed, &ids)?;
    let mut metrics = Vec::new();
    let mut routings = Vec::new();
    let mut aux_terms = Vec::new();
    let mut moe_idx = 0;
    for (spec, b) in cfg.blocks().into_iter().zip(&w.blocks) {
        let acfg = cfg.attention_config(spec.attention);
        let mask = match spec.attention {
            LayerKind::Local => local.clone(),
            LayerKind::Global => global.clone(),
        };
        x = sandwich_block(tape, x, b.attn_norm_in, b.attn_norm_out, eps, |tape, h| {
            attention_forward(tape, h, &acfg, &b.attn, mask)
        })?;
        match &b.ffn {
            FfnVars::Dense(e) => {
                x = sandwich_block(tape, x, b.ffn_norm_in, b.ffn_norm_out, eps, |tape, h| {
                    swiglu_expert(tape, h, e)
                })?;
            }
            FfnVars::Moe(m) => {
                let state = &states[moe_idx];
                let fixed = frozen.map(|f| &f[moe_idx]);
                let mut captured = None;
                x = sandwich_block(tape, x, b.ffn_norm_in, b.ffn_norm_out, eps, |tape, h| {
                    let out = moe_sublayer(tape, h, &moe_cfg, m, &state.bias, fixed)?;
                    let o = out.output;
                    captured = Some(out);
                    Ok(o)
                })?;
                let out = captured.expect("sublayer ran");
                let aux_value = if cfg.aux_alpha > 0.0 {
                    let a = seq_aux_loss(
                        tape,
                        out.scores,
                        &out.routing,
                        &lengths,
                        cfg.top_k,
                        cfg.aux_alpha,
                    )?;
                    aux_terms.push(a);
                    tape.value(a).item().as_f64()
                } else {
                    0.0
                };
                metrics.push(MoeLayerMetrics {
                    layer: spec.index,
                    max_vio: out.stats.max_vio()?,
                    stats: out.stats,
                    aux_loss: aux_value,
                });
                routings.push(out.routing);
                moe_idx += 1;
            }
        }
    }
    let logits = final_head(tape, x, w.final_norm, w.unembed, eps)?;
    let targets = batch.targets.concat();
    let parts = training_loss(tape, logits, &targets, cfg.z_loss_weight, &aux_terms)?;

    let lv = tape.value(logits);
    let lse: Vec<f64> = (0..lv.rows())
        .map(|r| crate::numerics::tensor::logsumexp(lv.row(r)).as_f64())
        .collect();
    let mean_abs_lse = lse.iter().map(|v| v.abs()).sum::<f64>() / lse.len() as f64;
    let max_logit = lv
        .data()
        .iter()
        .fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
    let z = tape.value(parts.z).item().as_f64();
    Ok(ForwardOutput {
        loss: parts.total,
        logits,
        ce: tape.value(parts.ce).item().as_f64(),
        z_term: cfg.z_loss_weight * z,
        aux_total: metrics.iter().map(|m| m.aux_loss).sum(),
        moe: metrics,
        routings,
        mean_abs_lse,
        max_logit,
    })
}

impl<T: Scalar> ModelWeights<T> {
    /// Loss value and metrics without keeping the tape.
    pub fn evaluate(
        &self,
        batch: &Batch,
        cfg: &ModelConfig,
        states: &[RouterState],
    ) -> Result<(f64, ForwardOutput)> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape);
        let out = model_forward(&mut tape, batch, cfg, &vars, states, None)?;
        Ok((tape.value(out.loss).item().as_f64(), out))
    }
}
