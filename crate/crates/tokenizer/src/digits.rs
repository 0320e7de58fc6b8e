use crate::error::{Result, TokenizerError};

/// Longest digit segment chunked as one unit.
pub const DIGIT_SEGMENT_CAP: usize = 510;

/// Byte ranges of the place-aligned groups of an ASCII digit run of `len` bytes.
///
/// Runs are cut into segments of at most [`DIGIT_SEGMENT_CAP`] digits; each segment
/// yields a leading group of `len % 3` digits (when nonzero) followed by triples.
#[derive(Clone, Debug)]
pub struct DigitGroups {
    len: usize,
    pos: usize,
}

impl Iterator for DigitGroups {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        if self.pos >= self.len {
            return None;
        }
        let seg_start = self.pos - self.pos % DIGIT_SEGMENT_CAP;
        let seg_end = (seg_start + DIGIT_SEGMENT_CAP).min(self.len);
        let lead = (seg_end - seg_start) % 3;
        let step = if self.pos == seg_start && lead > 0 {
            lead
        } else {
            3
        };
        let g = (self.pos, self.pos + step);
        self.pos += step;
        Some(g)
    }
}

pub fn digit_group_ranges(len: usize) -> DigitGroups {
    DigitGroups { len, pos: 0 }
}

/// Splits a run of ASCII digits into place-aligned groups.
pub fn chunk_digits(run: &str) -> Result<Vec<&str>> {
    if let Some(c) = run.chars().find(|c| !c.is_ascii_digit()) {
        return Err(TokenizerError::Contract(format!(
            "chunk_digits got non-digit {c:?}"
        )));
    }
    Ok(digit_group_ranges(run.len())
        .map(|(a, b)| &run[a..b])
        .collect())
}
