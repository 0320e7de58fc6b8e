pub mod balance;
pub mod check;
pub mod pack;
pub mod tokenize;
pub mod train;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Flags shared by every subcommand.
#[derive(Clone, Debug)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
}

impl Common {
    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Parses the `--config` file, or returns `None` without one.
    pub fn load_config<T: DeserializeOwned>(&self) -> Result<Option<T>> {
        let Some(path) = &self.config else {
            return Ok(None);
        };
        let src =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg = toml::from_str(&src).with_context(|| format!("parsing {}", path.display()))?;
        Ok(Some(cfg))
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn write_json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}
