use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::TrainConfig;
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// `lr · √max(1, fan_out / fan_in)`
pub fn adjusted_lr(lr: f64, fan_in: usize, fan_out: usize) -> Result<f64> {
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::Parameter("fans must be positive".into()));
    }
    Ok(lr * (fan_out as f64 / fan_in as f64).max(1.0).sqrt())
}

/// Linear warmup to the peak, then linear decay to `final_fraction · peak` at the last step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup: usize,
    pub total: usize,
    pub final_fraction: f64,
}

impl LrSchedule {
    pub fn from_train(t: &TrainConfig) -> Self {
        Self {
            peak: t.lr,
            warmup: t.warmup_steps,
            total: t.steps,
            final_fraction: t.final_lr_fraction,
        }
    }

    /// Learning rate at 0-based `step`.
    pub fn at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.peak * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup).saturating_sub(1);
        if span == 0 {
            return self.peak;
        }
        let frac = ((step - self.warmup) as f64 / span as f64).min(1.0);
        self.peak * (1.0 - frac * (1.0 - self.final_fraction))
    }
}

/// How one parameter tensor is optimized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub lr_scale: f64,
    pub weight_decay: bool,
}

impl ParamGroup {
    /// Hidden matrices (`[fan_in × fan_out]`, applied as `x · W`) get the width
    /// adjustment; embedding and unembedding use the base rate; gains skip decay.
    pub fn for_param(name: &str, shape: &[usize]) -> Self {
        match shape {
            [fan_in, fan_out] if name != "embed" && name != "unembed" => Self {
                lr_scale: adjusted_lr(1.0, *fan_in, *fan_out).expect("positive extents"),
                weight_decay: true,
            },
            [_, _] => Self {
                lr_scale: 1.0,
                weight_decay: true,
            },
            _ => Self {
                lr_scale: 1.0,
                weight_decay: false,
            },
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    groups: Vec<ParamGroup>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(train: &TrainConfig, named_shapes: &[(String, Vec<usize>)]) -> Self {
        let groups = named_shapes
            .iter()
            .map(|(n, s)| ParamGroup::for_param(n, s))
            .collect();
        let zeros = |s: &Vec<usize>| vec![T::zero(); s.iter().product()];
        Self {
            beta1: train.beta1,
            beta2: train.beta2,
            eps: train.adam_eps,
            weight_decay: train.weight_decay,
            groups,
            m: named_shapes.iter().map(|(_, s)| zeros(s)).collect(),
            v: named_shapes.iter().map(|(_, s)| zeros(s)).collect(),
            t: 0,
        }
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(
        &mut self,
        params: Vec<&mut Tensor<T>>,
        grads: &[Tensor<T>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.groups.len() || grads.len() != self.groups.len() {
            return Err(Error::Contract("optimizer parameter count mismatch".into()));
        }
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let bc1 = T::one() - b1.powi(self.t as i32);
        let bc2 = T::one() - b2.powi(self.t as i32);
        let eps = T::of(self.eps);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::dim("optimizer step", p.shape(), g.shape()));
            }
            let group = self.groups[i];
            let lr_i = T::of(lr * group.lr_scale);
            let decay = if group.weight_decay {
                T::one() - lr_i * T::of(self.weight_decay)
            } else {
                T::one()
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gv), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gv;
                *vi = b2 * *vi + (T::one() - b2) * gv * gv;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w * decay - lr_i * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
