use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use deskmoe::model::Checkpoint;
use serde::Serialize;

use super::{write_json, Common};
use crate::checks::{run_criterion, CriterionReport, Suite};

pub const REPORT_FILE: &str = "check.json";

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// all, gradients, routing, balancer, digits, tokenizer, packing, smoke, config or lr-adjust.
    #[arg(long, default_value = "all")]
    pub suite: Suite,
    /// Validate a checkpoint file instead of running a suite.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report<'a> {
    suite: Suite,
    passed: bool,
    failed: Vec<u8>,
    criteria: &'a [CriterionReport],
}

pub fn run(common: &Common, args: &CheckArgs) -> Result<()> {
    if let Some(path) = &args.checkpoint {
        let ckpt = Checkpoint::<f64>::load(path)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        println!(
            "{}: {} at step {}, {} tensors",
            path.display(),
            ckpt.config.name,
            ckpt.step,
            ckpt.weights.tensors().len()
        );
        return Ok(());
    }
    let mut reports = Vec::new();
    for id in args.suite.criteria() {
        let r = run_criterion(id, common.seed)?;
        println!("{r}");
        reports.push(r);
    }
    let failed: Vec<u8> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.id)
        .collect();
    write_json(
        &common.path(REPORT_FILE),
        &Report {
            suite: args.suite,
            passed: failed.is_empty(),
            failed: failed.clone(),
            criteria: &reports,
        },
    )?;
    if !failed.is_empty() {
        bail!("failed criteria: {failed:?}");
    }
    Ok(())
}
