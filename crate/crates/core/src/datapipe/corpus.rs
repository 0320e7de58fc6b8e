use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A pre-tokenized document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(default)]
    pub id: u64,
    pub tokens: Vec<u32>,
    #[serde(default)]
    pub domain: u16,
}

impl Document {
    pub fn new(id: u64, tokens: Vec<u32>, domain: u16) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Parameter(format!("document {id} has no tokens")));
        }
        Ok(Self { id, tokens, domain })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Parameters of the synthetic lognormal corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusParams {
    pub count: usize,
    pub length_mu: f64,
    pub length_sigma: f64,
    /// Relative frequency of each domain label.
    pub domain_weights: Vec<f64>,
    /// Each domain draws tokens uniformly from its own band of this many ids.
    pub band: u32,
    pub seed: u64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            count: 150_000,
            length_mu: 6.0,
            length_sigma: 1.0,
            domain_weights: vec![0.8, 0.2],
            band: 256,
            seed: 0,
        }
    }
}

impl CorpusParams {
    pub fn validate(&self) -> Result<()> {
        if !self.length_mu.is_finite()
            || !(self.length_sigma >= 0.0 && self.length_sigma.is_finite())
        {
            return Err(Error::Config(format!(
                "invalid length distribution mu={} sigma={}",
                self.length_mu, self.length_sigma
            )));
        }
        if self.domain_weights.is_empty()
            || self
                .domain_weights
                .iter()
                .any(|w| !(*w >= 0.0) || !w.is_finite())
        {
            return Err(Error::Config(
                "domain weights must be finite and non-negative".into(),
            ));
        }
        if self.domain_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("domain weights sum to zero".into()));
        }
        if self.band == 0 {
            return Err(Error::Config("token band must be positive".into()));
        }
        if self.domain_weights.len() > u16::MAX as usize {
            return Err(Error::Config("too many domains".into()));
        }
        Ok(())
    }

    /// Normalized domain weights.
    pub fn domain_probs(&self) -> Vec<f64> {
        let s: f64 = self.domain_weights.iter().sum();
        self.domain_weights.iter().map(|w| w / s).collect()
    }

    pub fn vocab_size(&self) -> usize {
        self.band as usize * self.domain_weights.len()
    }
}

/// Lognormal lengths rounded to the nearest integer, at least 1; domain labels from
/// `domain_weights`; tokens uniform in `[domain·band, (domain+1)·band)`.
pub struct SynthCorpus {
    params: CorpusParams,
    lengths: LogNormal<f64>,
    domains: WeightedIndex<f64>,
    rng: ChaCha8Rng,
    emitted: usize,
}

impl SynthCorpus {
    pub fn new(params: CorpusParams) -> Result<Self> {
        params.validate()?;
        let lengths = LogNormal::new(params.length_mu, params.length_sigma)
            .map_err(|e| Error::Config(format!("lognormal: {e}")))?;
        let domains = WeightedIndex::new(&params.domain_weights)
            .map_err(|e| Error::Config(format!("domains: {e}")))?;
        let rng = ChaCha8Rng::seed_from_u64(params.seed);
        Ok(Self {
            params,
            lengths,
            domains,
            rng,
            emitted: 0,
        })
    }

    pub fn params(&self) -> &CorpusParams {
        &self.params
    }
}

impl Iterator for SynthCorpus {
    type Item = Document;

    fn next(&mut self) -> Option<Document> {
        if self.emitted >= self.params.count {
            return None;
        }
        let raw = self.lengths.sample(&mut self.rng).round();
        let len = if raw >= 1.0 {
            raw.min(u32::MAX as f64) as usize
        } else {
            1
        };
        let domain = self.domains.sample(&mut self.rng);
        let base = domain as u32 * self.params.band;
        let tokens = (0..len)
            .map(|_| base + self.rng.random_range(0..self.params.band))
            .collect();
        let doc = Document {
            id: self.emitted as u64,
            tokens,
            domain: domain as u16,
        };
        self.emitted += 1;
        Some(doc)
    }
}

pub fn synth_corpus(params: CorpusParams) -> Result<SynthCorpus> {
    SynthCorpus::new(params)
}

/// One JSON object per line: `{"tokens": [...], "domain": d}`; ids default to line numbers.
pub fn read_corpus_jsonl<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut doc: Document = serde_json::from_str(&line)
            .map_err(|e| Error::Parameter(format!("corpus line {}: {e}", i + 1)))?;
        if doc.tokens.is_empty() {
            return Err(Error::Parameter(format!(
                "corpus line {}: empty document",
                i + 1
            )));
        }
        if !line.contains("\"id\"") {
            doc.id = i as u64;
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus_jsonl<W: Write>(
    mut writer: W,
    docs: impl IntoIterator<Item = Document>,
) -> Result<()> {
    for d in docs {
        serde_json::to_writer(&mut writer, &d)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
