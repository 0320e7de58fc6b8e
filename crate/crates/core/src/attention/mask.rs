use crate::attention::config::LayerKind;
use crate::error::{Error, Result};

/// Description of which positions may attend to which.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaskSpec {
    pub len: usize,
    pub kind: LayerKind,
    pub window: usize,
    /// Document id per position; `Some` enables intra-document masking.
    pub doc_ids: Option<Vec<u32>>,
}

/// Allowed-position predicate over a (possibly batched) row layout.
///
/// Rows are grouped into independent sequences by `segments`; attention never
/// crosses a segment. Within a segment, position `t` may attend to `s` when
/// `s <= t`, and additionally `t - s < window` for local layers and
/// `doc(s) == doc(t)` when document ids are present.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    kind: LayerKind,
    window: usize,
    segment_start: Vec<usize>,
    doc_ids: Option<Vec<u32>>,
}

impl AttentionMask {
    /// Mask over consecutive sequences with the given lengths.
    pub fn batched(
        lengths: &[usize],
        kind: LayerKind,
        window: usize,
        doc_ids: Option<Vec<u32>>,
    ) -> Result<Self> {
        if lengths.is_empty() || lengths.iter().any(|&l| l == 0) {
            return Err(Error::Parameter("sequence lengths must be positive".into()));
        }
        if kind == LayerKind::Local && window == 0 {
            return Err(Error::Config("local mask needs window >= 1".into()));
        }
        let total: usize = lengths.iter().sum();
        if let Some(d) = &doc_ids {
            if d.len() != total {
                return Err(Error::dim("attention mask doc ids", &[total], &[d.len()]));
            }
        }
        let mut segment_start = Vec::with_capacity(total);
        let mut start = 0;
        for &l in lengths {
            segment_start.extend(std::iter::repeat_n(start, l));
            start += l;
        }
        Ok(Self {
            kind,
            window,
            segment_start,
            doc_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.segment_start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segment_start.is_empty()
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    /// Position of row `t` within its own sequence.
    pub fn position(&self, t: usize) -> usize {
        t - self.segment_start[t]
    }

    pub fn positions(&self) -> Vec<usize> {
        (0..self.len()).map(|t| self.position(t)).collect()
    }

    /// Smallest row index row `t` may attend to (before document filtering).
    pub fn lower_bound(&self, t: usize) -> usize {
        let seg = self.segment_start[t];
        match self.kind {
            LayerKind::Global => seg,
            LayerKind::Local => seg.max((t + 1).saturating_sub(self.window)),
        }
    }

    pub fn allows(&self, t: usize, s: usize) -> bool {
        if s > t || s < self.lower_bound(t) {
            return false;
        }
        match &self.doc_ids {
            Some(d) => d[s] == d[t],
            None => true,
        }
    }

    /// Allowed rows for `t` in increasing order. Always contains `t`.
    pub fn allowed(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        (self.lower_bound(t)..=t).filter(move |&s| self.allows(t, s))
    }
}

/// Mask for a single sequence.
pub fn build_mask(spec: &AttentionMaskSpec) -> Result<AttentionMask> {
    if spec.len == 0 {
        return Err(Error::Parameter("mask length must be >= 1".into()));
    }
    AttentionMask::batched(&[spec.len], spec.kind, spec.window, spec.doc_ids.clone())
}
