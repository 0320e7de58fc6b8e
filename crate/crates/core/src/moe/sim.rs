//! Synthetic routing stream for balancer experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moe::balance::{LoadStats, RouterState};
use crate::moe::config::{BalancerKind, BalancerParams};
use crate::moe::routing::select_topk;
use crate::scalar::sigmoid;

/// Affinity logits are `offset_i + N(0,1)` where the first `hot` experts carry an
/// offset chosen so that, without any bias, they receive `skew` times the load of
/// the others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkewedStream {
    pub n_experts: usize,
    pub top_k: usize,
    pub tokens: usize,
    pub steps: usize,
    pub hot: usize,
    pub skew: f64,
    pub seed: u64,
}

impl Default for SkewedStream {
    fn default() -> Self {
        Self {
            n_experts: 16,
            top_k: 2,
            tokens: 1024,
            steps: 2000,
            hot: 4,
            skew: 4.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BalanceTrace {
    pub balancer: Option<BalancerKind>,
    pub hot_offset: f64,
    pub max_vio: Vec<f64>,
    /// Mean `|b_after − b_before|` over experts, per step.
    pub mean_abs_bias_change: Vec<f64>,
    /// Sign rule: `|Σb|` after the step. SMEBU: `|Σ Δ|` before momentum.
    pub centering_residual: Vec<f64>,
    pub final_bias: Vec<f64>,
}

impl BalanceTrace {
    pub fn tail_mean(series: &[f64], n: usize) -> f64 {
        let tail = &series[series.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

impl SkewedStream {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0
            || self.top_k > self.n_experts
            || self.hot == 0
            || self.hot >= self.n_experts
        {
            return Err(Error::Config(
                "invalid expert counts for the skewed stream".into(),
            ));
        }
        if self.tokens == 0 || self.steps == 0 || !(self.skew >= 1.0) {
            return Err(Error::Config(
                "tokens, steps must be positive and skew >= 1".into(),
            ));
        }
        Ok(())
    }

    fn offsets(&self, hot_offset: f64) -> Vec<f64> {
        (0..self.n_experts)
            .map(|i| if i < self.hot { hot_offset } else { 0.0 })
            .collect()
    }

    /// Loads of one step of `tokens` draws.
    pub fn step_loads<R: Rng>(&self, offsets: &[f64], bias: &[f64], rng: &mut R) -> LoadStats {
        let mut counts = vec![0u64; self.n_experts];
        let mut scores = vec![0.0; self.n_experts];
        for _ in 0..self.tokens {
            for (s, o) in scores.iter_mut().zip(offsets) {
                let z: f64 = rng.sample(StandardNormal);
                *s = sigmoid(o + z);
            }
            for e in select_topk(&scores, bias, self.top_k) {
                counts[e] += 1;
            }
        }
        LoadStats::new(counts, self.tokens, self.top_k)
    }

    fn hot_ratio(&self, hot_offset: f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5EED_CA11);
        let offsets = self.offsets(hot_offset);
        let bias = vec![0.0; self.n_experts];
        let mut counts = vec![0u64; self.n_experts];
        for _ in 0..5 {
            let s = self.step_loads(&offsets, &bias, &mut rng);
            for (c, n) in counts.iter_mut().zip(s.counts) {
                *c += n;
            }
        }
        let hot = counts[..self.hot].iter().sum::<u64>() as f64 / self.hot as f64;
        let cold =
            counts[self.hot..].iter().sum::<u64>() as f64 / (self.n_experts - self.hot) as f64;
        hot / cold.max(1.0)
    }

    /// Bisection on the hot offset until the unbiased load ratio reaches `skew`.
    pub fn calibrate(&self) -> Result<f64> {
        self.validate()?;
        let (mut lo, mut hi) = (0.0, 5.0);
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            if self.hot_ratio(mid) < self.skew {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn run(&self, kind: BalancerKind, params: BalancerParams) -> Result<BalanceTrace> {
        let hot_offset = self.calibrate()?;
        self.run_with_offset(kind, params, hot_offset)
    }

    pub fn run_with_offset(
        &self,
        kind: BalancerKind,
        params: BalancerParams,
        hot_offset: f64,
    ) -> Result<BalanceTrace> {
        self.validate()?;
        let offsets = self.offsets(hot_offset);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut state = RouterState::new(self.n_experts, params);
        let mut trace = BalanceTrace {
            balancer: Some(kind),
            hot_offset,
            ..Default::default()
        };
        for _ in 0..self.steps {
            let stats = self.step_loads(&offsets, &state.bias, &mut rng);
            trace.max_vio.push(stats.max_vio()?);
            let upd = state.update(kind, &stats)?;
            trace.mean_abs_bias_change.push(upd.mean_abs_change());
            let residual = match kind {
                BalancerKind::Sign => state.bias.iter().sum::<f64>(),
                _ => upd.step.iter().sum::<f64>(),
            };
            trace.centering_residual.push(residual.abs());
        }
        trace.final_bias = state.bias;
        Ok(trace)
    }
}
