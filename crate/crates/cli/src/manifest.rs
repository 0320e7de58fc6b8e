use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Written once per run, next to the run's other outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub git_describe: Option<String>,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    /// `"ok"` or the error message.
    pub status: String,
}

impl RunManifest {
    pub fn start(subcommand: &str, config: Option<&Path>, seed: u64, out_dir: &Path) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            config: config.map(Path::to_path_buf),
            seed,
            out_dir: out_dir.to_path_buf(),
            git_describe: git_describe(),
            started_at: Utc::now(),
            finished_at: None,
            status: "running".into(),
        }
    }

    pub fn finish(&mut self, outcome: &Result<()>) {
        self.finished_at = Some(Utc::now());
        self.status = match outcome {
            Ok(()) => "ok".into(),
            Err(e) => format!("{e:#}"),
        };
    }

    pub fn write(&self) -> Result<()> {
        let path = self.out_dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

fn git_describe() -> Option<String> {
    let out = Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}
