use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datapipe::corpus::Document;
use crate::datapipe::pack::{copy_fragment, SequenceBuffer};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Resident {
    pub doc: Document,
    pub head: usize,
}

/// Random sequential document buffer.
///
/// Holds up to `2 · user_capacity` partially read documents. Each sequence is filled by
/// repeatedly picking a resident document uniformly at random and reading from its
/// read head until the sequence or the document ends. After each emitted sequence the
/// buffer is refilled to the internal capacity once it has drained to `user_capacity`.
pub struct Rsdb<I> {
    source: I,
    user_capacity: usize,
    seq_len: usize,
    resident: Vec<Resident>,
    rng: ChaCha8Rng,
    exhausted: bool,
    refills: usize,
}

impl<I: Iterator<Item = Document>> Rsdb<I> {
    pub fn new(source: I, user_capacity: usize, seq_len: usize, seed: u64) -> Result<Self> {
        if user_capacity == 0 || seq_len == 0 {
            return Err(Error::Parameter(
                "RSDB capacity and seq_len must be >= 1".into(),
            ));
        }
        let mut r = Self {
            source,
            user_capacity,
            seq_len,
            resident: Vec::with_capacity(2 * user_capacity),
            rng: ChaCha8Rng::seed_from_u64(seed),
            exhausted: false,
            refills: 0,
        };
        r.refill();
        Ok(r)
    }

    pub fn internal_capacity(&self) -> usize {
        2 * self.user_capacity
    }

    pub fn user_capacity(&self) -> usize {
        self.user_capacity
    }

    pub fn resident(&self) -> &[Resident] {
        &self.resident
    }

    pub fn resident_count(&self) -> usize {
        self.resident.len()
    }

    pub fn refills(&self) -> usize {
        self.refills
    }

    pub fn source_exhausted(&self) -> bool {
        self.exhausted
    }

    /// Loads new documents until the internal capacity is reached or the source ends.
    pub fn refill(&mut self) {
        let cap = self.internal_capacity();
        if self.resident.len() >= cap || self.exhausted {
            return;
        }
        while self.resident.len() < cap {
            match self.source.next() {
                Some(doc) if doc.is_empty() => continue,
                Some(doc) => self.resident.push(Resident { doc, head: 0 }),
                None => {
                    self.exhausted = true;
                    break;
                }
            }
        }
        self.refills += 1;
    }

    /// The next exactly full sequence, or `None` once the data cannot fill one.
    pub fn next_sequence(&mut self) -> Option<SequenceBuffer> {
        let mut buf = SequenceBuffer {
            tokens: Vec::with_capacity(self.seq_len),
            spans: Vec::new(),
        };
        while buf.tokens.len() < self.seq_len {
            if self.resident.is_empty() {
                self.refill();
                if self.resident.is_empty() {
                    return None;
                }
            }
            let i = self.rng.random_range(0..self.resident.len());
            let entry = &mut self.resident[i];
            entry.head = copy_fragment(&mut buf, &entry.doc, entry.head, self.seq_len);
            if entry.head == entry.doc.len() {
                self.resident.swap_remove(i);
            }
        }
        if self.resident.len() <= self.user_capacity {
            self.refill();
        }
        Some(buf)
    }
}

impl<I: Iterator<Item = Document>> Iterator for Rsdb<I> {
    type Item = SequenceBuffer;

    fn next(&mut self) -> Option<SequenceBuffer> {
        self.next_sequence()
    }
}

/// Per-worker buffers that split a fixed total capacity; sequences are taken from the
/// shards in rotation. Each shard reads only its own document stream.
pub struct ShardedRsdb<I> {
    shards: Vec<Rsdb<I>>,
    turn: usize,
}

impl<I: Iterator<Item = Document>> ShardedRsdb<I> {
    /// `total_capacity` must divide evenly across `sources`.
    pub fn new(sources: Vec<I>, total_capacity: usize, seq_len: usize, seed: u64) -> Result<Self> {
        let n = sources.len();
        if n == 0 || total_capacity % n != 0 || total_capacity < n {
            return Err(Error::Parameter(format!(
                "total capacity {total_capacity} must split evenly over {n} workers"
            )));
        }
        let shards = sources
            .into_iter()
            .enumerate()
            .map(|(w, s)| Rsdb::new(s, total_capacity / n, seq_len, seed.wrapping_add(w as u64)))
            .collect::<Result<_>>()?;
        Ok(Self { shards, turn: 0 })
    }

    pub fn workers(&self) -> usize {
        self.shards.len()
    }

    /// Combined internal capacity across all shards.
    pub fn total_internal_capacity(&self) -> usize {
        self.shards.iter().map(Rsdb::internal_capacity).sum()
    }

    pub fn shards(&self) -> &[Rsdb<I>] {
        &self.shards
    }
}

impl<I: Iterator<Item = Document>> Iterator for ShardedRsdb<I> {
    type Item = SequenceBuffer;

    fn next(&mut self) -> Option<SequenceBuffer> {
        let n = self.shards.len();
        for k in 0..n {
            let w = (self.turn + k) % n;
            if let Some(s) = self.shards[w].next_sequence() {
                self.turn = (w + 1) % n;
                return Some(s);
            }
        }
        None
    }
}
