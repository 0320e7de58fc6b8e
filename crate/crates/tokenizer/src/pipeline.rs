use crate::digits::{digit_group_ranges, DigitGroups};
use crate::scripts::{isolate_scripts, ScriptTable};
use crate::words::{split_words, Pretoken, PretokenKind};

/// Digit isolation, script isolation and word splitting, in that order.
///
/// The result tiles the input: spans are ordered, non-empty and contiguous.
/// Byte-level representation is left to the encoder.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PretokenPipeline {
    pub scripts: ScriptTable,
}

enum Pending {
    None,
    Digits { base: usize, groups: DigitGroups },
    Text(std::vec::IntoIter<Pretoken>),
}

/// Lazy pretoken stream; digit runs are chunked without buffering.
pub struct Pretokens<'p, 't> {
    pipeline: &'p PretokenPipeline,
    text: &'t str,
    pos: usize,
    pending: Pending,
}

impl Iterator for Pretokens<'_, '_> {
    type Item = Pretoken;

    fn next(&mut self) -> Option<Pretoken> {
        loop {
            match &mut self.pending {
                Pending::Digits { base, groups } => {
                    if let Some((a, b)) = groups.next() {
                        return Some(Pretoken {
                            start: *base + a,
                            end: *base + b,
                            kind: PretokenKind::Digits,
                        });
                    }
                }
                Pending::Text(it) => {
                    if let Some(p) = it.next() {
                        return Some(p);
                    }
                }
                Pending::None => {}
            }
            let bytes = self.text.as_bytes();
            let i = self.pos;
            if i >= bytes.len() {
                return None;
            }
            let digit = bytes[i].is_ascii_digit();
            let end = bytes[i..]
                .iter()
                .position(|b| b.is_ascii_digit() != digit)
                .map_or(bytes.len(), |k| i + k);
            self.pending = if digit {
                Pending::Digits {
                    base: i,
                    groups: digit_group_ranges(end - i),
                }
            } else {
                Pending::Text(self.pipeline.split_text(self.text, i, end).into_iter())
            };
            self.pos = end;
        }
    }
}

impl PretokenPipeline {
    pub fn new(scripts: ScriptTable) -> Self {
        Self { scripts }
    }

    pub fn iter<'p, 't>(&'p self, text: &'t str) -> Pretokens<'p, 't> {
        Pretokens {
            pipeline: self,
            text,
            pos: 0,
            pending: Pending::None,
        }
    }

    pub fn pretokenize(&self, text: &str) -> Vec<Pretoken> {
        self.iter(text).collect()
    }

    /// Script isolation and word splitting of the digit-free stretch `text[start..end]`.
    fn split_text(&self, text: &str, start: usize, end: usize) -> Vec<Pretoken> {
        let mut out = Vec::new();
        for region in isolate_scripts(&text[start..end], &self.scripts) {
            let (a, b) = (start + region.start, start + region.end);
            if region.script.is_some() {
                out.push(Pretoken {
                    start: a,
                    end: b,
                    kind: PretokenKind::ScriptRun,
                });
            } else {
                out.extend(split_words(&text[a..b]).into_iter().map(|p| Pretoken {
                    start: a + p.start,
                    end: a + p.end,
                    kind: p.kind,
                }));
            }
        }
        out
    }

    /// Pretoken strings, for inspection.
    pub fn pretokenize_str<'t>(&self, text: &'t str) -> Vec<&'t str> {
        self.iter(text).map(|p| p.text(text)).collect()
    }
}

/// [`PretokenPipeline::pretokenize`] with the default script table.
pub fn pretokenize(text: &str) -> Vec<Pretoken> {
    PretokenPipeline::default().pretokenize(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_text() {
        let p = PretokenPipeline::default();
        assert_eq!(
            p.pretokenize_str("x1234567y"),
            ["x", "1", "234", "567", "y"]
        );
        assert_eq!(p.pretokenize_str("abc漢字def"), ["abc", "漢字", "def"]);
        assert_eq!(p.pretokenize_str("ไทย한국"), ["ไทย", "한국"]);
        assert_eq!(
            p.pretokenize_str("costs $1,000.50 now"),
            ["costs", " $", "1", ",", "000", ".", "50", " now"]
        );
        assert!(p.pretokenize("").is_empty());
    }
}
