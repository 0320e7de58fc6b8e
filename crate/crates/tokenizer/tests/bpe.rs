use deskmoe_tokenizer::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_bytes(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<u8> {
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| rng.random()).collect()
}

/// Lowercase words from a small alphabet so that merges have something to find.
fn random_corpus(bytes: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    let mut total = 0;
    while total < bytes {
        let mut doc = String::new();
        for _ in 0..rng.random_range(5..60) {
            if !doc.is_empty() {
                doc.push(' ');
            }
            for _ in 0..rng.random_range(1..9) {
                doc.push(char::from(b'a' + rng.random_range(0..12u8)));
            }
            if rng.random_bool(0.1) {
                doc.push_str(&rng.random_range(0..100_000u32).to_string());
            }
        }
        total += doc.len();
        docs.push(doc);
    }
    docs
}

#[test]
fn repeated_letter_merges_in_order() {
    let docs = vec!["aaaa"; 50];
    let m = train_bpe(&docs, 258).unwrap();
    let a = u32::from(b'a');
    assert_eq!(m.merges(), &[(a, a), (256, 256)]);
    assert_eq!(m.token_bytes(257), Some(&b"aaaa"[..]));
    assert_eq!(m.encode("aaaa"), [257]);
    assert_eq!(m.encode("aaaaa"), [257, a]);
}

#[test]
fn byte_vocabulary_has_no_merges() {
    let m = train_bpe(["hello world"], 256).unwrap();
    assert!(m.merges().is_empty());
    assert_eq!(m.vocab_size(), 256);
    assert_eq!(m.encode("hi"), [104, 105]);
}

#[test]
fn training_rejects_bad_inputs() {
    assert!(matches!(
        train_bpe(["abc"], 255),
        Err(TokenizerError::Training(_))
    ));
    assert!(matches!(
        train_bpe(Vec::<String>::new(), 300),
        Err(TokenizerError::Training(_))
    ));
    assert!(matches!(
        train_bpe([""], 300),
        Err(TokenizerError::Training(_))
    ));
}

#[test]
fn training_stops_when_pairs_run_out() {
    let m = train_bpe(["ab"], 1000).unwrap();
    assert_eq!(m.merges().len(), 1);
    assert_eq!(m.encode("ab"), [256]);
}

#[test]
fn merges_never_cross_pretokens() {
    let m = train_bpe(vec!["ab ab ab ab"; 20], 300).unwrap();
    for id in m.base()..m.vocab_size() {
        let b = m.token_bytes(id as TokenId).unwrap();
        assert!(!b[1..].contains(&b' '), "{:?}", String::from_utf8_lossy(b));
    }
}

#[test]
fn specials_sit_between_bytes_and_merges() {
    let mut t = BpeTrainer::new(260);
    t.specials = vec!["<eos>".into(), "<pad>".into()];
    let m = t.train(vec!["abab"; 10]).unwrap();
    assert_eq!(m.base(), 258);
    assert_eq!(m.special_id("<eos>"), Some(256));
    assert_eq!(m.special_id("<pad>"), Some(257));
    assert_eq!(m.token_bytes(258), Some(&b"ab"[..]));
    assert_eq!(m.decode(&[256]).unwrap(), "<eos>");
}

#[test]
fn byte_fallback_round_trips_random_bytes() {
    let docs = random_corpus(50_000, 3);
    let m = train_bpe(&docs, 400).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let b = random_bytes(&mut rng, 64);
        let ids = m.encode_raw(&b);
        assert!(ids.len() <= b.len());
        assert_eq!(m.decode_bytes(&ids).unwrap(), b);
    }
    assert!(m.encode_raw(b"").is_empty());
}

#[test]
fn decode_rejects_unknown_ids() {
    let m = train_bpe(["abc"], 256).unwrap();
    assert!(matches!(m.decode(&[256]), Err(TokenizerError::Contract(_))));
}

#[test]
fn truncation_equals_training_to_the_smaller_vocabulary() {
    let docs = random_corpus(1 << 20, 5);
    let full = train_bpe(&docs, 500).unwrap();
    let probe = random_corpus(20_000, 6);
    for k in [260, 300, 500] {
        let direct = train_bpe(&docs, k).unwrap();
        let cut = full.truncate(k).unwrap();
        assert_eq!(cut, direct, "vocabulary {k}");
        for d in &probe {
            assert_eq!(cut.encode(d), direct.encode(d));
        }
    }
    assert!(full.truncate(255).is_err());
    assert!(full.truncate(501).is_err());
}

#[test]
fn model_file_round_trips() {
    let mut t = BpeTrainer::new(300);
    t.specials = vec!["<eos>".into()];
    let m = t.train(random_corpus(20_000, 7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.jsonl");
    m.save(std::fs::File::create(&path).unwrap()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + m.merges().len() + 1);
    let back =
        BpeModel::load(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(back, m);
}

#[test]
fn malformed_model_files_report_the_line() {
    let m = train_bpe(vec!["abcabc"; 10], 260).unwrap();
    let mut buf = Vec::new();
    m.save(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let load = |s: String| BpeModel::load(s.as_bytes());

    let mut broken = lines.clone();
    broken[2] = "{not json";
    assert!(matches!(
        load(broken.join("\n")),
        Err(TokenizerError::Format { line: 3, .. })
    ));

    assert_eq!(lines.len(), 4);
    let swapped = [lines[0], lines[2], lines[1], lines[3]].join("\n");
    assert!(matches!(
        load(swapped),
        Err(TokenizerError::Format { line: 2, .. })
    ));

    assert!(matches!(
        load(lines[..3].join("\n")),
        Err(TokenizerError::Format { .. })
    ));
    assert!(matches!(
        load(format!("{text}{}\n", lines[1])),
        Err(TokenizerError::Format { line: 5, .. })
    ));
    assert!(matches!(
        load(String::new()),
        Err(TokenizerError::Format { line: 1, .. })
    ));
    let bad_ref = text.replacen("\"left\":97", "\"left\":9999", 1);
    assert!(matches!(
        load(bad_ref),
        Err(TokenizerError::Format { line: 2, .. })
    ));
}

#[test]
fn efficiency_of_the_byte_model_is_one() {
    let m = BpeModel::bytes_only(Vec::new(), PretokenPipeline::default());
    let e = efficiency_metrics(&m, ["plain ascii text", "more of it 123"]).unwrap();
    assert_eq!(e.bytes_per_token, 1.0);
    assert_eq!(e.chars_per_token, 1.0);
    let e = efficiency_metrics(&m, ["é"]).unwrap();
    assert_eq!((e.bytes_per_token, e.chars_per_token), (1.0, 0.5));
    assert!(matches!(
        efficiency_metrics(&m, [""]),
        Err(TokenizerError::Metric(_))
    ));
}

#[test]
fn efficiency_counts_merged_tokens() {
    let m = train_bpe(vec!["abcd"; 10], 259).unwrap();
    assert_eq!(m.encode("abcd").len(), 1);
    let e = efficiency_metrics(&m, ["abcd"]).unwrap();
    assert_eq!(e.bytes_per_token, 4.0);
    assert_eq!(e.bytes_per_token, e.chars_per_token);
}

#[test]
fn encoding_cost_per_digit_is_flat_on_long_runs() {
    let m = train_bpe(["1234567890 0987654321"], 300).unwrap();
    let small = "5".repeat(10_000);
    let large = "5".repeat(1_000_000);
    let time = |s: &str, reps: usize| {
        let t = std::time::Instant::now();
        for _ in 0..reps {
            std::hint::black_box(m.encode(std::hint::black_box(s)));
        }
        t.elapsed().as_secs_f64() / reps as f64
    };
    // Interleaved so background load hits both sizes alike.
    let (mut ts, mut tl) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..7 {
        ts = ts.min(time(&small, 100));
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

proptest! {
    #[test]
    fn text_round_trips(s in any::<String>()) {
        let m = train_bpe(["the cat sat on the mat"], 270).unwrap();
        let ids = m.encode(&s);
        prop_assert!(ids.len() <= s.len());
        prop_assert_eq!(m.decode(&ids).unwrap(), s);
    }

    #[test]
    fn raw_bytes_round_trip(b in prop::collection::vec(any::<u8>(), 0..200)) {
        let m = train_bpe(["abc abc abd"], 262).unwrap();
        prop_assert_eq!(m.decode_bytes(&m.encode_raw(&b)).unwrap(), b);
    }
}
