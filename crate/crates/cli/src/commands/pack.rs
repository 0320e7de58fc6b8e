use anyhow::Result;
use clap::Args;
use deskmoe::datapipe::{packing_comparison, Packer, PackingParams};

use super::{create, Common};

pub const CSV_FILE: &str = "batches.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Args, Debug)]
pub struct PackArgs {
    /// Comma-separated packers to run.
    #[arg(long, value_delimiter = ',')]
    pub packers: Option<Vec<Packer>>,
    #[arg(long)]
    pub steps: Option<usize>,
}

/// `--seed` drives the corpus, the buffer and the bootstrap as `seed`, `seed+1`, `seed+2`.
pub fn params(common: &Common, args: &PackArgs) -> Result<PackingParams> {
    let mut p: PackingParams = common.load_config()?.unwrap_or_default();
    p.corpus.seed = common.seed;
    p.rsdb_seed = common.seed.wrapping_add(1);
    p.bootstrap_seed = common.seed.wrapping_add(2);
    if let Some(packers) = &args.packers {
        p.packers = packers.clone();
    }
    if let Some(s) = args.steps {
        p.steps = s;
    }
    p.validate()?;
    Ok(p)
}

pub fn run(common: &Common, args: &PackArgs) -> Result<()> {
    let report = packing_comparison(&params(common, args)?)?;
    report.write_csv(create(&common.path(CSV_FILE))?)?;
    report.write_summary_json(create(&common.path(SUMMARY_FILE))?)?;
    let s = &report.summary;
    for p in &s.packers {
        println!(
            "{}: mean BatchHet {:.5} over {} steps",
            p.packer, p.mean_batch_het, p.steps
        );
    }
    if let (Some(ratio), Some(lower)) = (s.ratio, s.rsdb_lower_fraction) {
        println!(
            "ratio {ratio:.4}, RSDB lower in {:.1}% of steps",
            100.0 * lower
        );
    }
    Ok(())
}
