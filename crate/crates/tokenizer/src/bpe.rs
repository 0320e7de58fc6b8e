use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TokenizerError};
use crate::pipeline::PretokenPipeline;
use crate::scripts::{ScriptRange, ScriptTable};

pub type TokenId = u32;

pub const FORMAT: &str = "deskmoe-bpe";
pub const FORMAT_VERSION: u32 = 1;

/// Byte-level BPE: ids `0..256` are raw bytes, then special tokens, then one id per
/// merge in rank order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(TokenId, TokenId)>,
    specials: Vec<String>,
    vocab: Vec<Vec<u8>>,
    ranks: HashMap<(TokenId, TokenId), u32>,
    pipeline: PretokenPipeline,
}

impl BpeModel {
    /// The pure byte model: no merges.
    pub fn bytes_only(specials: Vec<String>, pipeline: PretokenPipeline) -> Self {
        let mut vocab: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        vocab.extend(specials.iter().map(|s| s.as_bytes().to_vec()));
        Self {
            merges: Vec::new(),
            specials,
            vocab,
            ranks: HashMap::new(),
            pipeline,
        }
    }

    /// Appends a merge rule; both parts must already be in the vocabulary.
    fn push_merge(&mut self, left: TokenId, right: TokenId) -> Result<TokenId> {
        let n = self.vocab.len() as TokenId;
        let base = self.base() as TokenId;
        for id in [left, right] {
            if id >= n || (256..base).contains(&id) {
                return Err(TokenizerError::Contract(format!(
                    "merge part {id} is not a mergeable token"
                )));
            }
        }
        if self.ranks.contains_key(&(left, right)) {
            return Err(TokenizerError::Contract(format!(
                "duplicate merge ({left}, {right})"
            )));
        }
        let mut bytes = self.vocab[left as usize].clone();
        bytes.extend_from_slice(&self.vocab[right as usize]);
        self.ranks.insert((left, right), self.merges.len() as u32);
        self.merges.push((left, right));
        self.vocab.push(bytes);
        Ok(n)
    }

    /// First merge id.
    pub fn base(&self) -> usize {
        256 + self.specials.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn specials(&self) -> &[String] {
        &self.specials
    }

    pub fn pipeline(&self) -> &PretokenPipeline {
        &self.pipeline
    }

    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.vocab.get(id as usize).map(Vec::as_slice)
    }

    pub fn special_id(&self, s: &str) -> Option<TokenId> {
        self.specials
            .iter()
            .position(|x| x == s)
            .map(|i| (256 + i) as TokenId)
    }

    /// Keeps the first `vocab_size − base` merges.
    pub fn truncate(&self, vocab_size: usize) -> Result<Self> {
        if vocab_size < self.base() || vocab_size > self.vocab_size() {
            return Err(TokenizerError::Contract(format!(
                "cannot truncate a {}-token model to {vocab_size} (base {})",
                self.vocab_size(),
                self.base()
            )));
        }
        let mut m = Self::bytes_only(self.specials.clone(), self.pipeline.clone());
        for &(a, b) in &self.merges[..vocab_size - self.base()] {
            m.push_merge(a, b)?;
        }
        Ok(m)
    }

    /// Applies merges to one pretoken, always taking the lowest-ranked adjacent pair.
    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = bytes.iter().map(|&b| b as TokenId).collect();
        loop {
            let best = ids
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            let merged = self.base() as TokenId + rank;
            let mut out = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(ids[i]);
                    i += 1;
                }
            }
            ids = out;
        }
        ids
    }

    /// Pretokenizes and encodes each pretoken independently.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut cache: HashMap<&str, Vec<TokenId>> = HashMap::new();
        let mut out = Vec::new();
        for p in self.pipeline.iter(text) {
            let piece = p.text(text);
            let ids = cache
                .entry(piece)
                .or_insert_with(|| self.encode_bytes(piece.as_bytes()));
            out.extend_from_slice(ids);
        }
        out
    }

    /// Encodes arbitrary bytes: valid UTF-8 stretches go through the pretokenizer,
    /// invalid bytes become single byte tokens.
    pub fn encode_raw(&self, bytes: &[u8]) -> Vec<TokenId> {
        let mut out = Vec::new();
        for chunk in bytes.utf8_chunks() {
            out.extend(self.encode(chunk.valid()));
            out.extend(chunk.invalid().iter().map(|&b| b as TokenId));
        }
        out
    }

    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let b = self.token_bytes(id).ok_or_else(|| {
                TokenizerError::Contract(format!("token id {id} outside vocabulary"))
            })?;
            out.extend_from_slice(b);
        }
        Ok(out)
    }

    /// Lossy for byte sequences that are not UTF-8.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    vocab_size: usize,
    merges: usize,
    specials: usize,
    scripts: Vec<ScriptRange>,
}

#[derive(Serialize, Deserialize)]
struct MergeRecord {
    rank: u32,
    left: TokenId,
    right: TokenId,
}

#[derive(Serialize, Deserialize)]
struct SpecialRecord {
    special: String,
    id: TokenId,
}

impl BpeModel {
    /// Header line, one line per merge in rank order, then one per special token.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            vocab_size: self.vocab_size(),
            merges: self.merges.len(),
            specials: self.specials.len(),
            scripts: self.pipeline.scripts.ranges().to_vec(),
        };
        line(&mut w, &header)?;
        for (rank, &(left, right)) in self.merges.iter().enumerate() {
            line(
                &mut w,
                &MergeRecord {
                    rank: rank as u32,
                    left,
                    right,
                },
            )?;
        }
        for (i, s) in self.specials.iter().enumerate() {
            line(
                &mut w,
                &SpecialRecord {
                    special: s.clone(),
                    id: (256 + i) as TokenId,
                },
            )?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let parse_err = |line: usize, e: serde_json::Error| TokenizerError::Format {
            line,
            message: e.to_string(),
        };
        let (header_line, first) = lines.next().ok_or(TokenizerError::Format {
            line: 1,
            message: "empty model file".into(),
        })?;
        let n = header_line;
        let header: Header = serde_json::from_str(&first?).map_err(|e| parse_err(n, e))?;
        if header.format != FORMAT || header.version != FORMAT_VERSION {
            return Err(TokenizerError::Format {
                line: n,
                message: format!("unsupported format {} v{}", header.format, header.version),
            });
        }
        let scripts = ScriptTable::new(header.scripts).map_err(|e| TokenizerError::Format {
            line: n,
            message: e.to_string(),
        })?;
        let mut merges = Vec::with_capacity(header.merges);
        for k in 0..header.merges {
            let (n, l) = lines.next().ok_or(TokenizerError::Format {
                line: n + k + 1,
                message: "missing merge record".into(),
            })?;
            let m: MergeRecord = serde_json::from_str(&l?).map_err(|e| parse_err(n, e))?;
            if m.rank as usize != k {
                return Err(TokenizerError::Format {
                    line: n,
                    message: format!("merge rank {} out of order (expected {k})", m.rank),
                });
            }
            merges.push((n, m.left, m.right));
        }
        let mut specials = Vec::with_capacity(header.specials);
        for k in 0..header.specials {
            let (n, l) = lines.next().ok_or(TokenizerError::Format {
                line: header_line + header.merges + k + 1,
                message: "missing special record".into(),
            })?;
            let s: SpecialRecord = serde_json::from_str(&l?).map_err(|e| parse_err(n, e))?;
            if s.id as usize != 256 + k {
                return Err(TokenizerError::Format {
                    line: n,
                    message: format!("special id {} out of order", s.id),
                });
            }
            specials.push(s.special);
        }
        if let Some((n, _)) = lines.next() {
            return Err(TokenizerError::Format {
                line: n,
                message: "trailing records".into(),
            });
        }
        let mut model = Self::bytes_only(specials, PretokenPipeline::new(scripts));
        for (n, a, b) in merges {
            model.push_merge(a, b).map_err(|e| TokenizerError::Format {
                line: n,
                message: e.to_string(),
            })?;
        }
        if model.vocab_size() != header.vocab_size {
            return Err(TokenizerError::Format {
                line: header_line,
                message: format!(
                    "header vocab_size {} != {}",
                    header.vocab_size,
                    model.vocab_size()
                ),
            });
        }
        Ok(model)
    }
}

fn line<W: Write, T: Serialize>(w: &mut W, v: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, v).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct BpeTrainer {
    pub vocab_size: usize,
    pub specials: Vec<String>,
    pub pipeline: PretokenPipeline,
}

/// Heap key: highest count first, then the lexicographically smallest byte pair.
#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct Candidate {
    count: u64,
    bytes: Reverse<(Vec<u8>, Vec<u8>)>,
    pair: Reverse<(TokenId, TokenId)>,
}

struct Word {
    ids: Vec<TokenId>,
    count: u64,
}

impl BpeTrainer {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            ..Self::default()
        }
    }

    /// Pretoken frequencies of a corpus.
    pub fn count_pretokens<I, S>(&self, docs: I) -> HashMap<Vec<u8>, u64>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<Vec<u8>, u64> = HashMap::new();
        for d in docs {
            let d = d.as_ref();
            for p in self.pipeline.iter(d) {
                *counts.entry(p.text(d).as_bytes().to_vec()).or_default() += 1;
            }
        }
        counts
    }

    pub fn train<I, S>(&self, docs: I) -> Result<BpeModel>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.train_from_counts(self.count_pretokens(docs))
    }

    /// Repeatedly merges the most frequent adjacent pair inside pretokens.
    pub fn train_from_counts(&self, counts: HashMap<Vec<u8>, u64>) -> Result<BpeModel> {
        let mut model = BpeModel::bytes_only(self.specials.clone(), self.pipeline.clone());
        if self.vocab_size < model.base() {
            return Err(TokenizerError::Training(format!(
                "vocab_size {} is below the {} byte and special tokens",
                self.vocab_size,
                model.base()
            )));
        }
        if counts.is_empty() {
            return Err(TokenizerError::Training("empty corpus".into()));
        }
        let mut words: Vec<Word> = counts
            .into_iter()
            .map(|(b, count)| Word {
                ids: b.into_iter().map(TokenId::from).collect(),
                count,
            })
            .collect();
        // Fixed word order keeps the index lists reproducible.
        words.sort_by(|a, b| a.ids.cmp(&b.ids));

        let mut pair_counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
        let mut where_: HashMap<(TokenId, TokenId), Vec<usize>> = HashMap::new();
        for (wi, w) in words.iter().enumerate() {
            for p in w.ids.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_default() += w.count;
                where_.entry((p[0], p[1])).or_default().push(wi);
            }
        }
        let candidate = |model: &BpeModel, pair: (TokenId, TokenId), count: u64| Candidate {
            count,
            bytes: Reverse((
                model.vocab[pair.0 as usize].clone(),
                model.vocab[pair.1 as usize].clone(),
            )),
            pair: Reverse(pair),
        };
        let mut heap: BinaryHeap<Candidate> = pair_counts
            .iter()
            .map(|(&p, &c)| candidate(&model, p, c))
            .collect();
        let mut seen = vec![usize::MAX; words.len()];

        while model.vocab_size() < self.vocab_size {
            let Some(top) = heap.pop() else { break };
            let pair = top.pair.0;
            let current = pair_counts.get(&pair).copied().unwrap_or(0);
            if current != top.count {
                if current > 0 {
                    heap.push(candidate(&model, pair, current));
                }
                continue;
            }
            let merged = model.push_merge(pair.0, pair.1)?;
            let stamp = model.merges.len();
            let mut touched: Vec<(TokenId, TokenId)> = Vec::new();
            for wi in where_.remove(&pair).unwrap_or_default() {
                if seen[wi] == stamp {
                    continue;
                }
                seen[wi] = stamp;
                let w = &mut words[wi];
                if !w.ids.windows(2).any(|p| (p[0], p[1]) == pair) {
                    continue;
                }
                for p in w.ids.windows(2) {
                    let key = (p[0], p[1]);
                    let c = pair_counts.get_mut(&key).expect("counted");
                    *c -= w.count;
                    if *c == 0 {
                        pair_counts.remove(&key);
                    }
                }
                let mut out = Vec::with_capacity(w.ids.len());
                let mut i = 0;
                while i < w.ids.len() {
                    if i + 1 < w.ids.len() && (w.ids[i], w.ids[i + 1]) == pair {
                        out.push(merged);
                        i += 2;
                    } else {
                        out.push(w.ids[i]);
                        i += 1;
                    }
                }
                w.ids = out;
                for p in w.ids.windows(2) {
                    let key = (p[0], p[1]);
                    *pair_counts.entry(key).or_default() += w.count;
                    if p[0] == merged || p[1] == merged {
                        where_.entry(key).or_default().push(wi);
                        touched.push(key);
                    }
                }
            }
            touched.sort_unstable();
            touched.dedup();
            for key in touched {
                if let Some(&c) = pair_counts.get(&key) {
                    heap.push(candidate(&model, key, c));
                }
            }
        }
        Ok(model)
    }
}

/// [`BpeTrainer::train`] with the default pipeline and no special tokens.
pub fn train_bpe<I, S>(docs: I, vocab_size: usize) -> Result<BpeModel>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    BpeTrainer::new(vocab_size).train(docs)
}
