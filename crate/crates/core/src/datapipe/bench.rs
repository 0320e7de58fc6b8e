use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datapipe::corpus::{CorpusParams, SynthCorpus};
use crate::datapipe::metrics::{batch_het, bootstrap_ratio_ci, kurtosis, ProxyLoss};
use crate::datapipe::pack::{SequenceBuffer, SequentialPacker};
use crate::datapipe::rsdb::Rsdb;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Packer {
    Sequential,
    Rsdb,
}

impl fmt::Display for Packer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Packer::Sequential => "sequential",
            Packer::Rsdb => "rsdb",
        })
    }
}

impl FromStr for Packer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Packer::Sequential),
            "rsdb" => Ok(Packer::Rsdb),
            _ => Err(Error::Config(format!("unknown packer {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PackingParams {
    pub corpus: CorpusParams,
    pub seq_len: usize,
    pub microbatches: usize,
    pub seqs_per_microbatch: usize,
    pub steps: usize,
    pub rsdb_capacity: usize,
    pub rsdb_seed: u64,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    pub packers: Vec<Packer>,
}

impl Default for PackingParams {
    /// The reference skewed corpus: two domains at 80/20, lognormal(6, 1) lengths,
    /// 8 microbatches of 4 sequences of 1024 tokens, 2000 steps.
    fn default() -> Self {
        Self {
            corpus: CorpusParams::default(),
            seq_len: 1024,
            microbatches: 8,
            seqs_per_microbatch: 4,
            steps: 2000,
            rsdb_capacity: 256,
            rsdb_seed: 1,
            bootstrap_resamples: 1000,
            bootstrap_seed: 2,
            packers: vec![Packer::Sequential, Packer::Rsdb],
        }
    }
}

impl PackingParams {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        if self.seq_len == 0
            || self.microbatches == 0
            || self.seqs_per_microbatch == 0
            || self.steps == 0
        {
            return Err(Error::Config(
                "seq_len, microbatches, seqs_per_microbatch and steps must be >= 1".into(),
            ));
        }
        if self.rsdb_capacity == 0 {
            return Err(Error::Config("rsdb_capacity must be >= 1".into()));
        }
        if self.packers.is_empty() {
            return Err(Error::Config("at least one packer is required".into()));
        }
        Ok(())
    }
}

/// Per-step record for one packer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub step: usize,
    pub packer: Packer,
    pub losses: Vec<f64>,
    pub batch_het: f64,
    /// Tokens per domain, one histogram per microbatch.
    pub domain_tokens: Vec<Vec<u64>>,
}

impl BatchReport {
    pub fn max_loss(&self) -> f64 {
        self.losses
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackerSummary {
    pub packer: Packer,
    pub steps: usize,
    pub mean_batch_het: f64,
    pub kurtosis: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackingSummary {
    pub packers: Vec<PackerSummary>,
    /// `mean BatchHet(rsdb) / mean BatchHet(sequential)` when both ran.
    pub ratio: Option<f64>,
    pub ratio_ci95: Option<(f64, f64)>,
    /// Fraction of steps where RSDB had the strictly lower BatchHet.
    pub rsdb_lower_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PackingReport {
    pub params: PackingParams,
    pub steps: Vec<(Packer, Vec<BatchReport>)>,
    pub summary: PackingSummary,
}

fn run_packer<I: Iterator<Item = SequenceBuffer>>(
    packer: Packer,
    mut seqs: I,
    params: &PackingParams,
    proxy: &ProxyLoss,
) -> Result<Vec<BatchReport>> {
    let domains = params.corpus.domain_weights.len();
    let per_mb = params.seqs_per_microbatch;
    let mut out = Vec::with_capacity(params.steps);
    for step in 0..params.steps {
        let mut losses = Vec::with_capacity(params.microbatches);
        let mut hist = Vec::with_capacity(params.microbatches);
        for _ in 0..params.microbatches {
            let mb: Vec<SequenceBuffer> = seqs.by_ref().take(per_mb).collect();
            if mb.len() < per_mb {
                return Err(Error::Parameter(format!(
                    "{packer} packer ran out of data at step {step}; raise the corpus count"
                )));
            }
            losses.push(proxy.loss(&mb)?);
            let mut h = vec![0u64; domains];
            for s in &mb {
                for (a, b) in h.iter_mut().zip(s.domain_counts(domains)) {
                    *a += b;
                }
            }
            hist.push(h);
        }
        out.push(BatchReport {
            step,
            packer,
            batch_het: batch_het(&losses)?,
            losses,
            domain_tokens: hist,
        });
    }
    Ok(out)
}

/// Feeds identically seeded copies of the synthetic corpus to each packer and compares
/// per-step BatchHet under the fixed proxy loss.
pub fn packing_comparison(params: &PackingParams) -> Result<PackingReport> {
    params.validate()?;
    let proxy = ProxyLoss::from_domain_bands(&params.corpus.domain_probs(), params.corpus.band)?;
    let mut steps = Vec::new();
    for &packer in &params.packers {
        let corpus = SynthCorpus::new(params.corpus.clone())?;
        let reports = match packer {
            Packer::Sequential => run_packer(
                packer,
                SequentialPacker::new(corpus, params.seq_len)?,
                params,
                &proxy,
            )?,
            Packer::Rsdb => run_packer(
                packer,
                Rsdb::new(
                    corpus,
                    params.rsdb_capacity,
                    params.seq_len,
                    params.rsdb_seed,
                )?,
                params,
                &proxy,
            )?,
        };
        steps.push((packer, reports));
    }
    let summary = summarize(&steps, params)?;
    Ok(PackingReport {
        params: params.clone(),
        steps,
        summary,
    })
}

fn summarize(
    steps: &[(Packer, Vec<BatchReport>)],
    params: &PackingParams,
) -> Result<PackingSummary> {
    let series = |p: Packer| -> Option<Vec<f64>> {
        steps
            .iter()
            .find(|(q, _)| *q == p)
            .map(|(_, r)| r.iter().map(|b| b.batch_het).collect())
    };
    let packers = steps
        .iter()
        .map(|(p, r)| {
            let xs: Vec<f64> = r.iter().map(|b| b.batch_het).collect();
            PackerSummary {
                packer: *p,
                steps: xs.len(),
                mean_batch_het: xs.iter().sum::<f64>() / xs.len() as f64,
                kurtosis: kurtosis(&xs).ok(),
            }
        })
        .collect();
    let (mut ratio, mut ci, mut lower) = (None, None, None);
    if let (Some(a), Some(b)) = (series(Packer::Sequential), series(Packer::Rsdb)) {
        let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
        if sa > 0.0 {
            ratio = Some(sb / sa);
            ci = Some(bootstrap_ratio_ci(
                &a,
                &b,
                params.bootstrap_resamples,
                0.95,
                params.bootstrap_seed,
            )?);
        }
        let wins = a.iter().zip(&b).filter(|(x, y)| y < x).count();
        lower = Some(wins as f64 / a.len() as f64);
    }
    Ok(PackingSummary {
        packers,
        ratio,
        ratio_ci95: ci,
        rsdb_lower_fraction: lower,
    })
}

#[derive(Serialize)]
struct CsvRow {
    step: usize,
    packer: Packer,
    batch_het: f64,
    max_loss: f64,
    mean_loss: f64,
}

impl PackingReport {
    /// Columns `step, packer, batch_het, max_loss, mean_loss`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (_, reports) in &self.steps {
            for r in reports {
                w.serialize(CsvRow {
                    step: r.step,
                    packer: r.packer,
                    batch_het: r.batch_het,
                    max_loss: r.max_loss(),
                    mean_loss: r.mean_loss(),
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, &self.summary)?;
        Ok(())
    }

    pub fn series(&self, packer: Packer) -> Option<&[BatchReport]> {
        self.steps
            .iter()
            .find(|(p, _)| *p == packer)
            .map(|(_, r)| r.as_slice())
    }
}
