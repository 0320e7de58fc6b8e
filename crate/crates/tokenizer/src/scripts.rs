use serde::{Deserialize, Serialize};

use crate::error::{Result, TokenizerError};

/// A half-open codepoint range `[start, end)` assigned to a script label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRange {
    pub name: String,
    /// Runs of codepoints sharing a label become one pretoken.
    pub label: String,
    pub start: u32,
    pub end: u32,
}

/// Scripts isolated from surrounding text before word splitting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptTable {
    ranges: Vec<ScriptRange>,
}

impl Default for ScriptTable {
    fn default() -> Self {
        let r = |name: &str, label: &str, start: u32, end: u32| ScriptRange {
            name: name.into(),
            label: label.into(),
            start,
            end,
        };
        Self::new(vec![
            r("thai", "thai", 0x0E00, 0x0E80),
            r("lao", "lao", 0x0E80, 0x0F00),
            r("myanmar", "myanmar", 0x1000, 0x10A0),
            r("hangul-jamo", "hangul", 0x1100, 0x1200),
            r("khmer", "khmer", 0x1780, 0x1800),
            r("hiragana", "cjk", 0x3040, 0x30A0),
            r("katakana", "cjk", 0x30A0, 0x3100),
            r("cjk-ext-a", "cjk", 0x3400, 0x4DC0),
            r("cjk-unified", "cjk", 0x4E00, 0xA000),
            r("hangul-syllables", "hangul", 0xAC00, 0xD7A4),
        ])
        .expect("default table is valid")
    }
}

impl ScriptTable {
    /// Sorts the ranges and rejects empty or overlapping ones.
    pub fn new(mut ranges: Vec<ScriptRange>) -> Result<Self> {
        ranges.sort_by_key(|r| r.start);
        for r in &ranges {
            if r.start >= r.end || r.end > 0x11_0000 {
                return Err(TokenizerError::ScriptTable(format!(
                    "range {} [{:#x}, {:#x}) is empty or out of bounds",
                    r.name, r.start, r.end
                )));
            }
        }
        for w in ranges.windows(2) {
            if w[0].end > w[1].start {
                return Err(TokenizerError::ScriptTable(format!(
                    "ranges {} and {} overlap",
                    w[0].name, w[1].name
                )));
            }
        }
        Ok(Self { ranges })
    }

    pub fn ranges(&self) -> &[ScriptRange] {
        &self.ranges
    }

    /// Script label of `c`, or `None` for codepoints outside every range.
    pub fn classify(&self, c: char) -> Option<&str> {
        let cp = c as u32;
        let i = self.ranges.partition_point(|r| r.end <= cp);
        self.ranges
            .get(i)
            .filter(|r| r.start <= cp)
            .map(|r| r.label.as_str())
    }
}

/// A maximal run of codepoints with the same classification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScriptRegion<'t> {
    pub start: usize,
    pub end: usize,
    pub script: Option<&'t str>,
}

/// Cuts `text` at every transition between listed scripts and unlisted text.
pub fn isolate_scripts<'t>(text: &str, table: &'t ScriptTable) -> Vec<ScriptRegion<'t>> {
    let mut out: Vec<ScriptRegion<'t>> = Vec::new();
    for (i, c) in text.char_indices() {
        let s = table.classify(c);
        match out.last_mut() {
            Some(last) if last.script == s => last.end = i + c.len_utf8(),
            _ => out.push(ScriptRegion {
                start: i,
                end: i + c.len_utf8(),
                script: s,
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_is_total() {
        let t = ScriptTable::default();
        assert_eq!(t.classify('漢'), Some("cjk"));
        assert_eq!(t.classify('か'), Some("cjk"));
        assert_eq!(t.classify('한'), Some("hangul"));
        assert_eq!(t.classify('ᄀ'), Some("hangul"));
        assert_eq!(t.classify('ไ'), Some("thai"));
        assert_eq!(t.classify('a'), None);
        assert_eq!(t.classify('\u{D7A4}'), None);
        assert_eq!(t.classify('\u{10FFFF}'), None);
    }

    #[test]
    fn overlapping_ranges_are_rejected() {
        let r = |s, e| ScriptRange {
            name: format!("{s}"),
            label: "x".into(),
            start: s,
            end: e,
        };
        assert!(ScriptTable::new(vec![r(10, 20), r(19, 30)]).is_err());
        assert!(ScriptTable::new(vec![r(10, 10)]).is_err());
        assert!(ScriptTable::new(vec![r(20, 30), r(10, 20)]).is_ok());
    }
}
