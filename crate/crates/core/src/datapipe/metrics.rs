use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datapipe::pack::SequenceBuffer;
use crate::error::{Error, Result};

/// `max_i L_i − mean_i L_i` over the microbatch losses of one step.
pub fn batch_het(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Metric(
            "batch_het needs at least one microbatch".into(),
        ));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Metric("batch_het got a non-finite loss".into()));
    }
    let max = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok((max - mean).max(0.0))
}

/// Pearson kurtosis `m4 / m2²` (3 for a normal distribution).
pub fn kurtosis(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::Metric("kurtosis needs at least two samples".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    if m2 == 0.0 {
        return Err(Error::Metric(
            "kurtosis of a constant series is undefined".into(),
        ));
    }
    Ok(m4 / (m2 * m2))
}

/// Percentile bootstrap interval for `mean(b) / mean(a)` over paired samples.
pub fn bootstrap_ratio_ci(
    a: &[f64],
    b: &[f64],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.is_empty() || resamples == 0 || !(0.0..1.0).contains(&level) {
        return Err(Error::Metric(
            "bootstrap needs equal non-empty samples and a level in [0,1)".into(),
        ));
    }
    let n = a.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios: Vec<f64> = (0..resamples)
        .map(|_| {
            let (mut sa, mut sb) = (0.0, 0.0);
            for _ in 0..n {
                let i = rng.random_range(0..n);
                sa += a[i];
                sb += b[i];
            }
            sb / sa
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let idx = |q: f64| ((q * (resamples - 1) as f64).round() as usize).min(resamples - 1);
    Ok((ratios[idx(tail)], ratios[idx(1.0 - tail)]))
}

/// Token-level cross-entropy under a fixed reference unigram distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyLoss {
    neg_log_q: Vec<f64>,
}

impl ProxyLoss {
    pub fn new(probs: &[f64]) -> Result<Self> {
        let s: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !(*p > 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(
                "reference distribution must be positive and sum to 1".into(),
            ));
        }
        Ok(Self {
            neg_log_q: probs.iter().map(|p| -p.ln()).collect(),
        })
    }

    /// Mixture of per-domain uniform bands of width `band` with the given domain probabilities.
    pub fn from_domain_bands(domain_probs: &[f64], band: u32) -> Result<Self> {
        let probs: Vec<f64> = domain_probs
            .iter()
            .flat_map(|&p| std::iter::repeat_n(p / band as f64, band as usize))
            .collect();
        Self::new(&probs)
    }

    /// Mean `−ln q(token)` over all tokens of the given sequences.
    pub fn loss<'a>(&self, seqs: impl IntoIterator<Item = &'a SequenceBuffer>) -> Result<f64> {
        let (mut total, mut n) = (0.0, 0usize);
        for s in seqs {
            for &t in &s.tokens {
                let v = self.neg_log_q.get(t as usize).ok_or_else(|| {
                    Error::Lookup(format!("token {t} outside the reference vocabulary"))
                })?;
                total += v;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Metric("proxy loss over zero tokens".into()));
        }
        Ok(total / n as f64)
    }
}
