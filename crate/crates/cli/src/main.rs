use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use deskmoe_cli::commands::{balance, check, pack, tokenize, train, Common};
use deskmoe_cli::manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(
    name = "deskmoe",
    version,
    about = "Sparse MoE reference stack: training, packing, balancing, tokenizers"
)]
struct Cli {
    /// TOML config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice in the run (required).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (required); created if missing.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Smoke-train a model and write metrics and a checkpoint.
    Train(train::TrainArgs),
    /// Compare sequential packing with the random document buffer.
    PackBench(pack::PackArgs),
    /// Run bias balancers on a skewed synthetic routing stream.
    BalanceSim(balance::BalanceArgs),
    /// Train, apply and inspect byte-level BPE tokenizers.
    Tokenize(tokenize::TokenizeArgs),
    /// Run acceptance suites or validate a checkpoint.
    Check(check::CheckArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::PackBench(_) => "pack-bench",
            Command::BalanceSim(_) => "balance-sim",
            Command::Tokenize(_) => "tokenize",
            Command::Check(_) => "check",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.context("--seed is required")?;
    let out = cli.out.context("--out is required")?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let common = Common {
        config: cli.config,
        seed,
        out,
    };
    let mut manifest = RunManifest::start(
        cli.command.name(),
        common.config.as_deref(),
        seed,
        &common.out,
    );
    let outcome = match &cli.command {
        Command::Train(a) => train::run(&common, a),
        Command::PackBench(a) => pack::run(&common, a),
        Command::BalanceSim(a) => balance::run(&common, a),
        Command::Tokenize(a) => tokenize::run(&common, a),
        Command::Check(a) => check::run(&common, a),
    };
    manifest.finish(&outcome);
    manifest.write()?;
    outcome
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
