use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moe::config::{BalancerKind, BalancerParams};

/// Per-expert token counts for one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadStats {
    pub counts: Vec<u64>,
    pub tokens: usize,
    pub top_k: usize,
}

impl LoadStats {
    pub fn new(counts: Vec<u64>, tokens: usize, top_k: usize) -> Self {
        Self {
            counts,
            tokens,
            top_k,
        }
    }

    pub fn empty(n_experts: usize, top_k: usize) -> Self {
        Self::new(vec![0; n_experts], 0, top_k)
    }

    /// `n̄ = Σ n_i / N_r`
    pub fn mean(&self) -> f64 {
        self.counts.iter().sum::<u64>() as f64 / self.counts.len() as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Accumulates another micro-batch into this step's totals.
    pub fn merge(&mut self, other: &LoadStats) -> Result<()> {
        if other.counts.len() != self.counts.len() {
            return Err(Error::dim(
                "merge load stats",
                &[self.counts.len()],
                &[other.counts.len()],
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.tokens += other.tokens;
        Ok(())
    }

    pub fn max_vio(&self) -> Result<f64> {
        let loads: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        max_vio(&loads)
    }
}

/// `(max_i load_i − mean) / mean`
pub fn max_vio(loads: &[f64]) -> Result<f64> {
    if loads.is_empty() {
        return Err(Error::Metric("max_vio of no experts".into()));
    }
    let mean = loads.iter().sum::<f64>() / loads.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::Metric("max_vio undefined for zero mean load".into()));
    }
    let max = loads.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((max - mean) / mean)
}

/// Expert bias and momentum of one MoE layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouterState {
    pub bias: Vec<f64>,
    pub momentum: Vec<f64>,
    pub params: BalancerParams,
}

/// What one balancer step did.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BiasUpdate {
    /// Sign rule: `γ·sign(n̄−n)`. SMEBU: the mean-centered `λ·tanh(κv)`.
    pub step: Vec<f64>,
    /// `b_after − b_before`.
    pub applied: Vec<f64>,
}

impl BiasUpdate {
    pub fn mean_abs_change(&self) -> f64 {
        if self.applied.is_empty() {
            return 0.0;
        }
        self.applied.iter().map(|d| d.abs()).sum::<f64>() / self.applied.len() as f64
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn center(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v {
        *x -= mean;
    }
}

impl RouterState {
    pub fn new(n_experts: usize, params: BalancerParams) -> Self {
        Self {
            bias: vec![0.0; n_experts],
            momentum: vec![0.0; n_experts],
            params,
        }
    }

    pub fn n_experts(&self) -> usize {
        self.bias.len()
    }

    fn check(&self, stats: &LoadStats) -> Result<()> {
        if stats.counts.len() != self.bias.len() {
            return Err(Error::dim(
                "bias update",
                &[self.bias.len()],
                &[stats.counts.len()],
            ));
        }
        Ok(())
    }

    pub fn update(&mut self, kind: BalancerKind, stats: &LoadStats) -> Result<BiasUpdate> {
        match kind {
            BalancerKind::Sign => self.update_sign(stats),
            BalancerKind::Smebu => self.update_smebu(stats),
            BalancerKind::None => {
                self.check(stats)?;
                Ok(BiasUpdate {
                    step: vec![0.0; self.bias.len()],
                    applied: vec![0.0; self.bias.len()],
                })
            }
        }
    }

    /// `b += γ·sign(n̄ − n)`, then `b -= mean(b)`.
    pub fn update_sign(&mut self, stats: &LoadStats) -> Result<BiasUpdate> {
        self.check(stats)?;
        let mean = stats.mean();
        let before = self.bias.clone();
        let step: Vec<f64> = stats
            .counts
            .iter()
            .map(|&n| self.params.gamma * sign(mean - n as f64))
            .collect();
        for (b, d) in self.bias.iter_mut().zip(&step) {
            *b += d;
        }
        center(&mut self.bias);
        let applied = self.bias.iter().zip(&before).map(|(a, b)| a - b).collect();
        Ok(BiasUpdate { step, applied })
    }

    /// `v = (n̄−n)/n̄`, `Δ = center(λ·tanh(κv))`, `m = βm + (1−β)Δ`, `b += m`.
    /// Skipped when the step saw no tokens.
    pub fn update_smebu(&mut self, stats: &LoadStats) -> Result<BiasUpdate> {
        self.check(stats)?;
        let mean = stats.mean();
        if !(mean > 0.0) {
            return Ok(BiasUpdate {
                step: vec![0.0; self.bias.len()],
                applied: vec![0.0; self.bias.len()],
            });
        }
        let BalancerParams {
            lambda,
            kappa,
            beta,
            ..
        } = self.params;
        let mut step: Vec<f64> = stats
            .counts
            .iter()
            .map(|&n| lambda * (kappa * (mean - n as f64) / mean).tanh())
            .collect();
        center(&mut step);
        for (m, d) in self.momentum.iter_mut().zip(&step) {
            *m = beta * *m + (1.0 - beta) * d;
        }
        let mut applied = Vec::with_capacity(self.bias.len());
        for (b, m) in self.bias.iter_mut().zip(&self.momentum) {
            let before = *b;
            *b += m;
            applied.push(*b - before);
        }
        Ok(BiasUpdate { step, applied })
    }

    pub fn bias_norm(&self) -> f64 {
        self.bias.iter().map(|b| b * b).sum::<f64>().sqrt()
    }

    pub fn momentum_norm(&self) -> f64 {
        self.momentum.iter().map(|m| m * m).sum::<f64>().sqrt()
    }
}

/// One JSON-lines metrics record per MoE layer and step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoeStepRecord {
    pub step: usize,
    pub layer: usize,
    pub max_vio: f64,
    pub loads: Vec<u64>,
    pub bias_norm: f64,
    pub momentum_norm: f64,
    pub aux_loss: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(c: &[u64]) -> LoadStats {
        LoadStats::new(c.to_vec(), c.iter().sum::<u64>() as usize, 1)
    }

    #[test]
    fn sign_example() {
        let mut s = RouterState::new(
            2,
            BalancerParams {
                gamma: 0.01,
                ..Default::default()
            },
        );
        let u = s.update_sign(&stats(&[2, 0])).unwrap();
        assert_eq!(u.step, vec![-0.01, 0.01]);
        assert!(s.bias.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn balanced_loads_are_fixed_points() {
        let mut s = RouterState::new(4, BalancerParams::default());
        s.bias = vec![0.1, -0.3, 0.15, 0.05];
        let before = s.clone();
        s.update_sign(&stats(&[3, 3, 3, 3])).unwrap();
        assert_eq!(s, before);
        s.update_smebu(&stats(&[3, 3, 3, 3])).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn starved_expert_smebu_magnitude() {
        let mut s = RouterState::new(2, BalancerParams::default());
        let u = s.update_smebu(&stats(&[2, 0])).unwrap();
        // v = [-1, 1], tanh(±2) is already centered
        assert!((u.step[1] - 5e-4 * 2f64.tanh()).abs() < 1e-18);
        assert!((2f64.tanh() - 0.9640).abs() < 1e-4);
    }

    #[test]
    fn no_tokens_skips_smebu() {
        let mut s = RouterState::new(3, BalancerParams::default());
        s.momentum = vec![0.1, 0.0, -0.1];
        let before = s.clone();
        s.update_smebu(&stats(&[0, 0, 0])).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn max_vio_examples() {
        assert_eq!(max_vio(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert!((max_vio(&[2.0, 1.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((max_vio(&[12.0, 0.0, 0.0, 0.0]).unwrap() - 3.0).abs() < 1e-15);
        assert!(max_vio(&[0.0, 0.0]).is_err());
    }
}
