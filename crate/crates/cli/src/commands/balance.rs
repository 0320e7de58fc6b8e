use std::collections::BTreeMap;
use std::io::Write;

use anyhow::Result;
use clap::Args;
use deskmoe::moe::sim::{BalanceTrace, SkewedStream};
use deskmoe::moe::{BalancerKind, BalancerParams};
use serde::{Deserialize, Serialize};

use super::{create, write_json, write_json_line, Common};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceSimConfig {
    pub stream: SkewedStream,
    pub params: BalancerParams,
}

#[derive(Args, Debug)]
pub struct BalanceArgs {
    /// Comma-separated balancers to simulate.
    #[arg(long, value_delimiter = ',', default_value = "none,sign,smebu")]
    pub balancers: Vec<BalancerKind>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Steps at the end of the run that count as equilibrium.
    #[arg(long, default_value_t = 500)]
    pub tail: usize,
}

#[derive(Serialize)]
struct StepLine {
    step: usize,
    max_vio: f64,
    mean_abs_bias_change: f64,
    centering_residual: f64,
}

#[derive(Debug, Serialize)]
pub struct TailSummary {
    pub mean_max_vio: f64,
    pub max_max_vio: f64,
    pub mean_abs_bias_change: f64,
    pub max_centering_residual: f64,
}

fn name(kind: BalancerKind) -> &'static str {
    match kind {
        BalancerKind::None => "none",
        BalancerKind::Sign => "sign",
        BalancerKind::Smebu => "smebu",
    }
}

pub fn run(common: &Common, args: &BalanceArgs) -> Result<()> {
    let cfg: BalanceSimConfig = common.load_config()?.unwrap_or_default();
    let mut stream = cfg.stream;
    stream.seed = common.seed;
    if let Some(s) = args.steps {
        stream.steps = s;
    }
    let offset = stream.calibrate()?;
    let tail = args.tail.min(stream.steps);
    let mut summary = BTreeMap::new();
    for &kind in &args.balancers {
        let trace = stream.run_with_offset(kind, cfg.params, offset)?;
        let mut w = create(&common.path(&format!("trace-{}.jsonl", name(kind))))?;
        for i in 0..trace.max_vio.len() {
            write_json_line(
                &mut w,
                &StepLine {
                    step: i + 1,
                    max_vio: trace.max_vio[i],
                    mean_abs_bias_change: trace.mean_abs_bias_change[i],
                    centering_residual: trace.centering_residual[i],
                },
            )?;
        }
        w.flush()?;
        let from = trace.max_vio.len() - tail;
        let s = TailSummary {
            mean_max_vio: BalanceTrace::tail_mean(&trace.max_vio, tail),
            max_max_vio: trace.max_vio[from..].iter().cloned().fold(0.0, f64::max),
            mean_abs_bias_change: BalanceTrace::tail_mean(&trace.mean_abs_bias_change, tail),
            max_centering_residual: trace.centering_residual.iter().cloned().fold(0.0, f64::max),
        };
        println!(
            "{}: tail MaxVio mean {:.4} max {:.4}, mean |Δb| {:.3e}",
            name(kind),
            s.mean_max_vio,
            s.max_max_vio,
            s.mean_abs_bias_change
        );
        summary.insert(name(kind), s);
    }
    write_json(&common.path(SUMMARY_FILE), &summary)
}
