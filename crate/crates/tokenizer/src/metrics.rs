use serde::{Deserialize, Serialize};

use crate::bpe::BpeModel;
use crate::error::{Result, TokenizerError};

/// Compression of a corpus under a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    pub bytes: u64,
    pub chars: u64,
    pub tokens: u64,
    pub bytes_per_token: f64,
    pub chars_per_token: f64,
}

pub fn efficiency_metrics<I, S>(model: &BpeModel, docs: I) -> Result<Efficiency>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let (mut bytes, mut chars, mut tokens) = (0u64, 0u64, 0u64);
    for d in docs {
        let d = d.as_ref();
        bytes += d.len() as u64;
        chars += d.chars().count() as u64;
        tokens += model.encode(d).len() as u64;
    }
    if tokens == 0 {
        return Err(TokenizerError::Metric(
            "corpus encodes to zero tokens".into(),
        ));
    }
    Ok(Efficiency {
        bytes,
        chars,
        tokens,
        bytes_per_token: bytes as f64 / tokens as f64,
        chars_per_token: chars as f64 / tokens as f64,
    })
}
