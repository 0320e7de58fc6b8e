use std::time::Instant;

use deskmoe_tokenizer::*;
use fancy_regex::Regex;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Split points of the zero-width pattern `(?=(\d{3})+(?!\d))` inside a digit run,
/// found by trying the lookahead at every position with explicit backtracking.
fn lookahead_oracle(run: &[u8]) -> Vec<usize> {
    let digit = |i: usize| run.get(i).is_some_and(u8::is_ascii_digit);
    let mut cuts = Vec::new();
    for p in 1..run.len() {
        // Greedy (\d{3})+ then back off one group at a time until (?!\d) holds.
        let mut groups = 0;
        while (0..3).all(|k| digit(p + 3 * groups + k)) {
            groups += 1;
        }
        while groups > 0 && digit(p + 3 * groups) {
            groups -= 1;
        }
        if groups > 0 {
            cuts.push(p);
        }
    }
    cuts
}

fn split_at<'a>(s: &'a str, cuts: &[usize]) -> Vec<&'a str> {
    let mut out = Vec::new();
    let mut prev = 0;
    for &c in cuts.iter().chain(std::iter::once(&s.len())) {
        out.push(&s[prev..c]);
        prev = c;
    }
    out
}

fn random_digits(len: usize, rng: &mut ChaCha8Rng) -> String {
    (0..len)
        .map(|_| char::from(b'0' + rng.random_range(0..10u8)))
        .collect()
}

#[test]
fn digit_chunks_match_the_regex_exhaustively_to_60() {
    let re = Regex::new(r"(?=(\d{3})+(?!\d))").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for len in 1..=60 {
        let run = random_digits(len, &mut rng);
        let cuts: Vec<usize> = re
            .find_iter(&run)
            .map(|m| m.unwrap().start())
            .filter(|&p| p > 0 && p < len)
            .collect();
        assert_eq!(
            cuts,
            lookahead_oracle(run.as_bytes()),
            "oracle disagrees with regex at {len}"
        );
        assert_eq!(
            chunk_digits(&run).unwrap(),
            split_at(&run, &cuts),
            "length {len}"
        );
        let text = format!("ab{run}cd");
        let pieces = PretokenPipeline::default().pretokenize_str(&text);
        assert_eq!(
            &pieces[1..pieces.len() - 1],
            split_at(&run, &cuts).as_slice()
        );
    }
}

#[test]
fn digit_chunks_match_the_oracle_on_random_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100_000 {
        let len = rng.random_range(1..=DIGIT_SEGMENT_CAP);
        let run = random_digits(len, &mut rng);
        assert_eq!(
            chunk_digits(&run).unwrap(),
            split_at(&run, &lookahead_oracle(run.as_bytes()))
        );
    }
}

#[test]
fn digit_pretokens_have_place_aligned_groups() {
    let text = format!("a{}b", "9".repeat(400));
    let p = pretokenize(&text);
    let digits: Vec<_> = p
        .iter()
        .filter(|t| t.kind == PretokenKind::Digits)
        .collect();
    assert!((1..=3).contains(&digits[0].len()));
    assert!(digits[1..].iter().all(|t| t.len() == 3));
}

#[test]
fn pretokenize_cost_per_digit_is_flat_on_long_runs() {
    let p = PretokenPipeline::default();
    let small = "7".repeat(10_000);
    let large = "7".repeat(1_000_000);
    let time = |s: &str, reps: usize| {
        let t = Instant::now();
        for _ in 0..reps {
            std::hint::black_box(p.iter(std::hint::black_box(s)).count());
        }
        t.elapsed().as_secs_f64() / reps as f64
    };
    // Interleaved so background load hits both sizes alike.
    let (mut ts, mut tl) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..7 {
        ts = ts.min(time(&small, 200));
        tl = tl.min(time(&large, 1));
    }
    // Per-digit cost may drift with cache effects but not with length: a quadratic
    // scan would be ~100x slower per digit at 10^6.
    let per_digit = (ts / 1e4, tl / 1e6);
    assert!(
        per_digit.1 <= 2.0 * per_digit.0,
        "per digit {:.2e}s at 10^6 vs {:.2e}s at 10^4",
        per_digit.1,
        per_digit.0
    );
}

#[test]
fn script_isolation_examples() {
    let p = PretokenPipeline::default();
    assert_eq!(p.pretokenize_str("abc漢字def"), ["abc", "漢字", "def"]);
    assert_eq!(p.pretokenize_str("ไทย한국"), ["ไทย", "한국"]);
    assert_eq!(
        p.pretokenize_str("ລາວ ខ្មែរ မြန်မာ"),
        ["ລາວ", " ", "ខ្មែរ", " ", "မြန်မာ"]
    );
    assert_eq!(
        p.pretokenize_str("ひらがなカタカナ漢字"),
        ["ひらがなカタカナ漢字"]
    );
    let table = ScriptTable::default();
    let regions = isolate_scripts("plain ascii text, no scripts!", &table);
    assert_eq!(regions.len(), 1);
    assert_eq!(regions[0].script, None);
}

/// Classify each codepoint, then group equal neighbours.
fn script_oracle(text: &str, table: &ScriptTable) -> Vec<String> {
    let mut out: Vec<(Option<String>, String)> = Vec::new();
    for c in text.chars() {
        let s = table.classify(c).map(str::to_string);
        match out.last_mut() {
            Some((k, run)) if *k == s => run.push(c),
            _ => out.push((s, c.to_string())),
        }
    }
    out.into_iter().map(|(_, r)| r).collect()
}

#[test]
fn custom_script_tables_are_honoured() {
    let table = ScriptTable::new(vec![ScriptRange {
        name: "greek".into(),
        label: "greek".into(),
        start: 0x0370,
        end: 0x0400,
    }])
    .unwrap();
    let p = PretokenPipeline::new(table);
    assert_eq!(p.pretokenize_str("abcαβγ漢"), ["abc", "αβγ", "漢"]);
}

#[test]
fn word_splitting_examples() {
    let w = |s: &str| -> Vec<String> {
        split_words(s)
            .iter()
            .map(|p| p.text(s).to_string())
            .collect()
    };
    assert_eq!(w(" hello world"), [" hello", " world"]);
    assert_eq!(w("don't"), ["don", "'t"]);
    assert!(w("").is_empty());
    assert_eq!(
        w("We'll see...\n\nOK"),
        ["We", "'ll", " see", "...", "\n\n", "OK"]
    );
    assert_eq!(w("a   b"), ["a", "  ", " b"]);
    assert_eq!(w("x\r\ny"), ["x", "\r\n", "y"]);
    assert_eq!(w("@user #tag"), ["@", "user", " #", "tag"]);
    let kinds: Vec<PretokenKind> = split_words(" hi!\n ").iter().map(|p| p.kind).collect();
    assert_eq!(
        kinds,
        [
            PretokenKind::Word,
            PretokenKind::Punct,
            PretokenKind::Newline,
            PretokenKind::Whitespace
        ]
    );
}

fn mixed_text() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        "[a-zA-Z]{1,8}",
        "[0-9]{1,12}",
        "[ \t\n\r]{1,3}",
        "[!-/:-@\\[-`{-~]{1,3}",
        "'(s|t|re|ve|ll|d|m|x)",
        "[漢字かなカナ한국ไทย]{1,4}",
        "[éüßøλж]{1,3}",
        any::<char>().prop_map(|c| c.to_string()),
    ];
    prop::collection::vec(piece, 0..20).prop_map(|v| v.concat())
}

proptest! {
    #[test]
    fn pretokenize_tiles_the_input(text in mixed_text()) {
        let p = pretokenize(&text);
        let mut at = 0;
        for t in &p {
            prop_assert_eq!(t.start, at);
            prop_assert!(t.end > t.start);
            at = t.end;
        }
        prop_assert_eq!(at, text.len());
    }

    #[test]
    fn word_tokens_never_mix_letters_and_symbols(text in mixed_text()) {
        for t in split_words(&text) {
            let s = t.text(&text);
            let body = s.strip_prefix(' ').unwrap_or(s);
            let letters = body.chars().filter(|c| c.is_alphabetic()).count();
            let symbols = body.chars().filter(|c| !c.is_alphabetic() && !c.is_whitespace()).count();
            let contraction = body.starts_with('\'') && symbols == 1;
            prop_assert!(letters == 0 || symbols == 0 || contraction, "{:?}", s);
        }
    }

    #[test]
    fn script_regions_match_run_length_oracle(text in mixed_text()) {
        let table = ScriptTable::default();
        let got: Vec<&str> = isolate_scripts(&text, &table).iter().map(|r| &text[r.start..r.end]).collect();
        prop_assert_eq!(got, script_oracle(&text, &table));
    }
}
