use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretokenKind {
    Digits,
    ScriptRun,
    Word,
    Punct,
    Whitespace,
    Newline,
}

/// A byte span of the source text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pretoken {
    pub start: usize,
    pub end: usize,
    pub kind: PretokenKind,
}

impl Pretoken {
    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.start..self.end]
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Letter,
    Newline,
    Space,
    Symbol,
}

fn class(c: char) -> Class {
    if c == '\n' || c == '\r' {
        Class::Newline
    } else if c.is_whitespace() {
        Class::Space
    } else if c.is_alphabetic() {
        Class::Letter
    } else {
        Class::Symbol
    }
}

const CONTRACTIONS: [&str; 7] = ["re", "ve", "ll", "s", "t", "m", "d"];

/// Length in bytes of a contraction suffix (`'s`, `'t`, `'re`, ...) at the start of `s`.
fn contraction_len(s: &str) -> Option<usize> {
    let rest = s.strip_prefix('\'')?;
    CONTRACTIONS
        .iter()
        .find(|c| {
            rest.get(..c.len())
                .is_some_and(|r| r.eq_ignore_ascii_case(c))
        })
        .map(|c| 1 + c.len())
}

fn run_end(s: &str, from: usize, cls: Class) -> usize {
    s[from..]
        .char_indices()
        .find(|&(_, c)| class(c) != cls)
        .map_or(s.len(), |(i, _)| from + i)
}

/// Splits text into words, contractions, symbol runs and whitespace.
///
/// At each position the first matching rule wins:
/// 1. `'` followed by `s`, `t`, `m`, `d`, `re`, `ve` or `ll` (any case);
/// 2. an optional single space and a run of letters;
/// 3. an optional single space and a run of symbols (neither letter nor whitespace);
/// 4. whitespace up to and including the last line break of a whitespace run;
/// 5. a whitespace run, leaving its final character for rules 2–3 when that
///    character is a space directly before a letter or symbol.
///
/// Offsets in the result are relative to `text`.
pub fn split_words(text: &str) -> Vec<Pretoken> {
    let mut out = Vec::new();
    let mut i = 0;
    let next_class = |at: usize| text.get(at..).and_then(|r| r.chars().next()).map(class);
    while i < text.len() {
        let c = text[i..].chars().next().expect("in bounds");
        let (end, kind) = if let Some(n) = contraction_len(&text[i..]) {
            (i + n, PretokenKind::Word)
        } else {
            let attach = match next_class(i + 1) {
                Some(k @ (Class::Letter | Class::Symbol)) if c == ' ' => Some((i + 1, k)),
                _ => None,
            };
            match attach.unwrap_or((i, class(c))) {
                (body, Class::Letter) => (run_end(text, body, Class::Letter), PretokenKind::Word),
                (body, Class::Symbol) => (run_end(text, body, Class::Symbol), PretokenKind::Punct),
                _ => whitespace(text, i),
            }
        };
        out.push(Pretoken {
            start: i,
            end,
            kind,
        });
        i = end;
    }
    out
}

/// Rules 4 and 5 at a whitespace character.
fn whitespace(text: &str, i: usize) -> (usize, PretokenKind) {
    let run_end = text[i..]
        .char_indices()
        .find(|&(_, c)| !c.is_whitespace())
        .map_or(text.len(), |(k, _)| i + k);
    let run = &text[i..run_end];
    if let Some(k) = run.rfind(['\n', '\r']) {
        return (i + k + 1, PretokenKind::Newline);
    }
    if run_end == text.len() {
        return (run_end, PretokenKind::Whitespace);
    }
    let last = run.char_indices().last().expect("non-empty run");
    if last.0 > 0 {
        // Keep the final character for the token that follows.
        (i + last.0, PretokenKind::Whitespace)
    } else {
        (run_end, PretokenKind::Whitespace)
    }
}
