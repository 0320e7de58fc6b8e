use serde::{Deserialize, Serialize};

use crate::datapipe::corpus::Document;
use crate::error::{Error, Result};

/// A fragment of one document inside a sequence buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub doc_id: u64,
    pub domain: u16,
    /// Offset of the fragment within its document.
    pub doc_offset: usize,
    /// Offset of the fragment within the buffer.
    pub start: usize,
    pub len: usize,
}

/// An exactly full packed sequence with its document boundaries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceBuffer {
    pub tokens: Vec<u32>,
    pub spans: Vec<Span>,
}

impl SequenceBuffer {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Span index of every position, for intra-document masking.
    pub fn segment_ids(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.tokens.len());
        for (i, s) in self.spans.iter().enumerate() {
            out.extend(std::iter::repeat_n(i as u32, s.len));
        }
        out
    }

    /// Tokens per domain label, indexed by label.
    pub fn domain_counts(&self, domains: usize) -> Vec<u64> {
        let mut c = vec![0u64; domains];
        for s in &self.spans {
            if let Some(v) = c.get_mut(s.domain as usize) {
                *v += s.len as u64;
            }
        }
        c
    }

    /// Spans are contiguous, non-empty and cover the whole buffer.
    pub fn spans_tile(&self) -> bool {
        let mut at = 0;
        for s in &self.spans {
            if s.start != at || s.len == 0 {
                return false;
            }
            at += s.len;
        }
        at == self.tokens.len()
    }
}

/// Fills `buf` from `doc` starting at `head`; returns the new head.
pub(crate) fn copy_fragment(
    buf: &mut SequenceBuffer,
    doc: &Document,
    head: usize,
    seq_len: usize,
) -> usize {
    let take = (seq_len - buf.tokens.len()).min(doc.len() - head);
    buf.spans.push(Span {
        doc_id: doc.id,
        domain: doc.domain,
        doc_offset: head,
        start: buf.tokens.len(),
        len: take,
    });
    buf.tokens.extend_from_slice(&doc.tokens[head..head + take]);
    head + take
}

/// Concatenates documents in arrival order into `seq_len` buffers; a document that
/// crosses a boundary continues in the next buffer. A trailing partial buffer is withheld.
pub struct SequentialPacker<I> {
    source: I,
    seq_len: usize,
    current: Option<(Document, usize)>,
}

impl<I: Iterator<Item = Document>> SequentialPacker<I> {
    pub fn new(source: I, seq_len: usize) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::Parameter("seq_len must be >= 1".into()));
        }
        Ok(Self {
            source,
            seq_len,
            current: None,
        })
    }
}

impl<I: Iterator<Item = Document>> Iterator for SequentialPacker<I> {
    type Item = SequenceBuffer;

    fn next(&mut self) -> Option<SequenceBuffer> {
        let mut buf = SequenceBuffer {
            tokens: Vec::with_capacity(self.seq_len),
            spans: Vec::new(),
        };
        while buf.tokens.len() < self.seq_len {
            let (doc, head) = match self.current.take() {
                Some(c) => c,
                None => (self.source.by_ref().find(|d| !d.is_empty())?, 0),
            };
            let head = copy_fragment(&mut buf, &doc, head, self.seq_len);
            if head < doc.len() {
                self.current = Some((doc, head));
            }
        }
        Some(buf)
    }
}

pub fn sequential_pack<I: Iterator<Item = Document>>(
    source: I,
    seq_len: usize,
) -> Result<SequentialPacker<I>> {
    SequentialPacker::new(source, seq_len)
}
