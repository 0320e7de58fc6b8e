use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use deskmoe_tokenizer::{efficiency_metrics, BpeModel, BpeTrainer, TokenId};
use serde::Serialize;

use super::{create, write_json, Common};
use crate::checks::verify_truncation;

pub const MODEL_FILE: &str = "tokenizer.jsonl";
pub const TOKENS_FILE: &str = "tokens.json";
pub const DECODED_FILE: &str = "decoded.bin";
pub const STATS_FILE: &str = "stats.json";
pub const TRUNCATION_FILE: &str = "truncation.json";

#[derive(Subcommand, Debug)]
pub enum TokenizeCommand {
    /// Train a byte-level BPE; every non-empty input line is a document.
    Train {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        vocab_size: usize,
        #[arg(long = "special")]
        specials: Vec<String>,
    },
    /// Encode a file's raw bytes to a JSON array of token ids.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Decode a JSON array of token ids back to bytes.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Bytes and characters per token over text files.
    Stats {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
    },
    /// Keep only the first merges of a model.
    Truncate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab_size: usize,
    },
    /// Train at --vocab-size, truncate to each --at point, and compare with
    /// training there directly.
    VerifyTruncation {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        vocab_size: usize,
        #[arg(long, required = true, num_args = 1..)]
        at: Vec<usize>,
    },
}

#[derive(Args, Debug)]
pub struct TokenizeArgs {
    #[command(subcommand)]
    pub command: TokenizeCommand,
}

fn read_docs(paths: &[PathBuf]) -> Result<Vec<String>> {
    let mut docs = Vec::new();
    for p in paths {
        let text =
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        docs.extend(
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string),
        );
    }
    Ok(docs)
}

pub fn load_model(path: &Path) -> Result<BpeModel> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BpeModel::load(BufReader::new(f)).with_context(|| format!("loading {}", path.display()))
}

fn save_model(model: &BpeModel, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    model.save(&mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TruncationResult {
    vocab_size: usize,
    equivalent: bool,
}

pub fn run(common: &Common, args: &TokenizeArgs) -> Result<()> {
    match &args.command {
        TokenizeCommand::Train {
            input,
            vocab_size,
            specials,
        } => {
            let mut trainer = BpeTrainer::new(*vocab_size);
            trainer.specials = specials.clone();
            let model = trainer.train(read_docs(input)?)?;
            save_model(&model, &common.path(MODEL_FILE))?;
            println!(
                "{} merges, vocabulary {}",
                model.merges().len(),
                model.vocab_size()
            );
        }
        TokenizeCommand::Encode { model, input } => {
            let model = load_model(model)?;
            let bytes =
                std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
            let ids = model.encode_raw(&bytes);
            write_json(&common.path(TOKENS_FILE), &ids)?;
            println!("{} bytes -> {} tokens", bytes.len(), ids.len());
        }
        TokenizeCommand::Decode { model, input } => {
            let model = load_model(model)?;
            let src = std::fs::read_to_string(input)
                .with_context(|| format!("reading {}", input.display()))?;
            let ids: Vec<TokenId> =
                serde_json::from_str(&src).context("token file must be a JSON array of ids")?;
            std::fs::write(common.path(DECODED_FILE), model.decode_bytes(&ids)?)?;
        }
        TokenizeCommand::Stats { model, input } => {
            let model = load_model(model)?;
            let e = efficiency_metrics(&model, read_docs(input)?)?;
            println!(
                "bytes/token {:.4}, chars/token {:.4} ({} tokens)",
                e.bytes_per_token, e.chars_per_token, e.tokens
            );
            write_json(&common.path(STATS_FILE), &e)?;
        }
        TokenizeCommand::Truncate { model, vocab_size } => {
            let cut = load_model(model)?.truncate(*vocab_size)?;
            save_model(&cut, &common.path(MODEL_FILE))?;
        }
        TokenizeCommand::VerifyTruncation {
            input,
            vocab_size,
            at,
        } => {
            let docs = read_docs(input)?;
            let results = verify_truncation(&docs, *vocab_size, at, &docs)?;
            let out: Vec<TruncationResult> = results
                .iter()
                .map(|&(vocab_size, equivalent)| TruncationResult {
                    vocab_size,
                    equivalent,
                })
                .collect();
            write_json(&common.path(TRUNCATION_FILE), &out)?;
            let bad: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
            if !bad.is_empty() {
                bail!("truncation differs from direct training at {bad:?}");
            }
            println!("truncation matches direct training at {at:?}");
        }
    }
    Ok(())
}
