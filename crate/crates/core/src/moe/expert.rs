use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, TruncatedNormal, Var};
use crate::scalar::Scalar;

/// SwiGLU feed-forward weights: `down(SiLU(u·gate) ⊙ (u·up))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertWeights<T> {
    pub gate: Tensor<T>,
    pub up: Tensor<T>,
    pub down: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct ExpertVars {
    pub gate: Var,
    pub up: Var,
    pub down: Var,
}

impl<T: Scalar> ExpertWeights<T> {
    pub fn shapes(d_model: usize, hidden: usize) -> [Vec<usize>; 3] {
        [
            vec![d_model, hidden],
            vec![d_model, hidden],
            vec![hidden, d_model],
        ]
    }

    pub fn init<R: Rng + ?Sized>(
        d_model: usize,
        hidden: usize,
        dist: &TruncatedNormal,
        rng: &mut R,
    ) -> Self {
        let [g, u, d] = Self::shapes(d_model, hidden);
        Self {
            gate: dist.sample_tensor(g, rng),
            up: dist.sample_tensor(u, rng),
            down: dist.sample_tensor(d, rng),
        }
    }

    pub fn zeros(d_model: usize, hidden: usize) -> Self {
        let [g, u, d] = Self::shapes(d_model, hidden);
        Self {
            gate: Tensor::zeros(g),
            up: Tensor::zeros(u),
            down: Tensor::zeros(d),
        }
    }

    pub fn check(&self, d_model: usize, hidden: usize) -> Result<()> {
        for (t, want) in [&self.gate, &self.up, &self.down]
            .into_iter()
            .zip(Self::shapes(d_model, hidden))
        {
            if t.shape() != want.as_slice() {
                return Err(Error::dim("expert weights", t.shape(), &want));
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&Tensor<T>; 3] {
        [&self.gate, &self.up, &self.down]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 3] {
        [&mut self.gate, &mut self.up, &mut self.down]
    }

    pub fn record(&self, tape: &mut Tape<T>) -> ExpertVars {
        ExpertVars {
            gate: tape.leaf(self.gate.clone()),
            up: tape.leaf(self.up.clone()),
            down: tape.leaf(self.down.clone()),
        }
    }
}

pub fn swiglu_expert<T: Scalar>(tape: &mut Tape<T>, u: Var, w: &ExpertVars) -> Result<Var> {
    let a = tape.matmul(u, w.gate)?;
    let a = tape.silu(a)?;
    let b = tape.matmul(u, w.up)?;
    let h = tape.mul(a, b)?;
    tape.matmul(h, w.down)
}
