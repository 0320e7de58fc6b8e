use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, TrainConfig};
use crate::model::forward::{model_forward, Batch};
use crate::model::optim::{AdamW, LrSchedule};
use crate::model::weights::ModelWeights;
use crate::moe::{BalancerKind, RouterState};
use crate::numerics::tensor::{logsumexp, Tensor};
use crate::numerics::Tape;
use crate::scalar::Scalar;

/// A short token stream drawn uniformly from the first `alphabet` ids.
pub fn memorizable_corpus(len: usize, alphabet: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(0..alphabet)).collect()
}

/// `batch_size` windows of `seq_len + 1` tokens at uniform offsets into `corpus`.
pub fn sample_windows<R: Rng>(
    corpus: &[usize],
    batch_size: usize,
    seq_len: usize,
    rng: &mut R,
) -> Result<Batch> {
    if corpus.len() < seq_len + 1 {
        return Err(Error::Parameter(format!(
            "corpus of {} tokens is shorter than one window of {}",
            corpus.len(),
            seq_len + 1
        )));
    }
    let seqs: Vec<Vec<usize>> = (0..batch_size)
        .map(|_| {
            let start = rng.random_range(0..=corpus.len() - seq_len - 1);
            corpus[start..start + seq_len + 1].to_vec()
        })
        .collect();
    Batch::next_token(&seqs)
}

/// One line of the training metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub ce: f64,
    pub z_term: f64,
    pub aux_loss: f64,
    /// Mean over MoE layers of the per-layer MaxVio.
    pub max_vio: f64,
    pub max_vio_per_layer: Vec<f64>,
    pub loads_per_layer: Vec<Vec<u64>>,
    pub bias_norms: Vec<f64>,
    pub momentum_norms: Vec<f64>,
    pub mean_abs_lse: f64,
    pub max_logit: f64,
    pub grad_norm: f64,
    /// Max minus mean of the per-sequence cross-entropies in the batch.
    pub batch_het: f64,
}

pub struct Trainer<T> {
    pub config: ModelConfig,
    pub train: TrainConfig,
    pub weights: ModelWeights<T>,
    pub states: Vec<RouterState>,
    pub step: usize,
    optimizer: AdamW<T>,
    schedule: LrSchedule,
}

fn per_sequence_ce<T: Scalar>(logits: &Tensor<T>, batch: &Batch) -> Vec<f64> {
    let mut row = 0;
    batch
        .targets
        .iter()
        .map(|targets| {
            let total: f64 = targets
                .iter()
                .map(|&t| {
                    let r = logits.row(row);
                    row += 1;
                    (logsumexp(r) - r[t]).as_f64()
                })
                .sum();
            total / targets.len() as f64
        })
        .collect()
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: ModelConfig, train: TrainConfig, seed: u64) -> Result<Self> {
        let weights = ModelWeights::init(&config, seed)?;
        let states = (0..config.moe_layers())
            .map(|_| RouterState::new(config.n_routed, config.balancer_params))
            .collect();
        Ok(Self::resume(config, train, weights, states, 0))
    }

    pub fn resume(
        config: ModelConfig,
        train: TrainConfig,
        weights: ModelWeights<T>,
        states: Vec<RouterState>,
        step: usize,
    ) -> Self {
        let optimizer = AdamW::new(&train, &config.parameter_shapes());
        let schedule = LrSchedule::from_train(&train);
        Self {
            config,
            train,
            weights,
            states,
            step,
            optimizer,
            schedule,
        }
    }

    /// Forward, backward, optimizer update, then one balancer update per MoE layer.
    pub fn step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let mut tape = Tape::new();
        let vars = self.weights.record(&mut tape);
        let out = model_forward(&mut tape, batch, &self.config, &vars, &self.states, None)?;
        let loss = tape.value(out.loss).item().as_f64();
        let step_no = self.step + 1;
        if !loss.is_finite() {
            return Err(Error::Metric(format!(
                "non-finite loss {loss} at step {step_no}"
            )));
        }
        let grads = tape.gradient(out.loss)?;
        let mut g: Vec<Tensor<T>> = vars.all().into_iter().map(|v| grads.wrt(v)).collect();
        let grad_norm = g
            .iter()
            .map(|t| {
                t.data()
                    .iter()
                    .map(|v| v.as_f64() * v.as_f64())
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Metric(format!(
                "non-finite gradient norm at step {step_no}"
            )));
        }
        if self.train.grad_clip > 0.0 && grad_norm > self.train.grad_clip {
            let s = T::of(self.train.grad_clip / grad_norm);
            for t in &mut g {
                for v in t.data_mut() {
                    *v *= s;
                }
            }
        }
        let lr = self.schedule.at(self.step);
        self.optimizer.step(self.weights.tensors_mut(), &g, lr)?;
        if !self.weights.all_finite() {
            return Err(Error::Metric(format!(
                "non-finite parameters after step {step_no}"
            )));
        }
        let kind = self.config.balancer;
        for (state, m) in self.states.iter_mut().zip(&out.moe) {
            state.update(kind, &m.stats)?;
        }
        let ce_seq = per_sequence_ce(tape.value(out.logits), batch);
        let ce_mean = ce_seq.iter().sum::<f64>() / ce_seq.len() as f64;
        let ce_max = ce_seq.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let per_layer: Vec<f64> = out.moe.iter().map(|m| m.max_vio).collect();
        self.step = step_no;
        Ok(StepRecord {
            step: step_no,
            lr,
            loss,
            ce: out.ce,
            z_term: out.z_term,
            aux_loss: out.aux_total,
            max_vio: if per_layer.is_empty() {
                0.0
            } else {
                per_layer.iter().sum::<f64>() / per_layer.len() as f64
            },
            max_vio_per_layer: per_layer,
            loads_per_layer: out.moe.iter().map(|m| m.stats.counts.clone()).collect(),
            bias_norms: self.states.iter().map(RouterState::bias_norm).collect(),
            momentum_norms: self.states.iter().map(RouterState::momentum_norm).collect(),
            mean_abs_lse: out.mean_abs_lse,
            max_logit: out.max_logit,
            grad_norm,
            batch_het: ce_max - ce_mean,
        })
    }

    pub fn balancer(&self) -> BalancerKind {
        self.config.balancer
    }
}

/// Smoke run on a memorized stream: returns one record per step.
pub fn smoke_train<T: Scalar>(
    config: &ModelConfig,
    train: &TrainConfig,
    corpus: &[usize],
    seed: u64,
) -> Result<Vec<StepRecord>> {
    let mut trainer = Trainer::<T>::new(config.clone(), train.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDA7A);
    (0..train.steps)
        .map(|_| {
            let batch = sample_windows(corpus, train.batch_size, config.seq_len, &mut rng)?;
            trainer.step(&batch)
        })
        .collect()
}
