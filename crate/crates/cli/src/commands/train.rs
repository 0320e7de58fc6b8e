use std::io::{BufReader, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use deskmoe::datapipe::read_corpus_jsonl;
use deskmoe::model::{memorizable_corpus, sample_windows, Checkpoint, RunConfig, Trainer};
use deskmoe::moe::BalancerKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{create, write_json_line, Common};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Bundled preset, used when no --config is given.
    #[arg(long, default_value = "tiny")]
    pub preset: String,
    /// Corpus as JSON lines of documents; token streams are concatenated.
    /// Without one, a memorizable stream is generated from the seed.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Overrides the config's balancer: none, sign or smebu.
    #[arg(long)]
    pub balancer: Option<BalancerKind>,
    /// Length of the generated corpus.
    #[arg(long, default_value_t = 1000)]
    pub corpus_tokens: usize,
    /// Distinct token ids in the generated corpus.
    #[arg(long, default_value_t = 64)]
    pub alphabet: usize,
}

pub fn run(common: &Common, args: &TrainArgs) -> Result<()> {
    let mut run = match &common.config {
        Some(path) => {
            RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => RunConfig::preset(&args.preset)?,
    };
    if let Some(s) = args.steps {
        run.train.steps = s;
    }
    if let Some(b) = args.batch_size {
        run.train.batch_size = b;
    }
    if let Some(kind) = args.balancer {
        run.model.balancer = kind;
    }
    let corpus: Vec<usize> = match &args.corpus {
        Some(path) => {
            let f =
                std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            read_corpus_jsonl(BufReader::new(f))?
                .into_iter()
                .flat_map(|d| d.tokens)
                .map(|t| t as usize)
                .collect()
        }
        None => memorizable_corpus(
            args.corpus_tokens,
            args.alphabet.min(run.model.vocab_size),
            common.seed,
        ),
    };
    if let Some(&t) = corpus.iter().find(|&&t| t >= run.model.vocab_size) {
        bail!(
            "corpus token {t} is outside the vocabulary of {}",
            run.model.vocab_size
        );
    }

    let mut trainer = Trainer::<f64>::new(run.model.clone(), run.train.clone(), common.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed ^ 0xDA7A);
    let mut metrics = create(&common.path(METRICS_FILE))?;
    for _ in 0..run.train.steps {
        let batch = sample_windows(&corpus, run.train.batch_size, run.model.seq_len, &mut rng)?;
        let record = match trainer.step(&batch) {
            Ok(r) => r,
            Err(e) => {
                metrics.flush()?;
                return Err(e.into());
            }
        };
        write_json_line(&mut metrics, &record)?;
    }
    metrics.flush()?;
    let checkpoint = Checkpoint {
        config: trainer.config.clone(),
        weights: trainer.weights.clone(),
        states: trainer.states.clone(),
        step: trainer.step as u64,
    };
    checkpoint.save(&common.path(CHECKPOINT_FILE))?;
    Ok(())
}
