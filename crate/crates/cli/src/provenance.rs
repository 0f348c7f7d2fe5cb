//! Per-run provenance record: effective config, seed, checkpoint hashes and
//! wall time.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use cyclevc_core::checkpoint::file_sha256;

pub const FILE: &str = "run.json";

/// `<path>.run.json`, for commands whose output is a single file.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".run.json");
    PathBuf::from(name)
}

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub command: String,
    pub argv: Vec<String>,
    pub version: &'static str,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Path to SHA-256 for every checkpoint read.
    pub input_checkpoints: BTreeMap<String, String>,
    /// Path to SHA-256 for every checkpoint written.
    pub output_checkpoints: BTreeMap<String, String>,
    pub results: serde_json::Value,
    pub wall_time_secs: f64,
}

impl Provenance {
    pub fn new(command: &str, argv: Vec<String>, seed: u64, config: &impl Serialize) -> Self {
        Self {
            command: command.to_owned(),
            argv,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config: serde_json::to_value(config).expect("config serializes"),
            input_checkpoints: BTreeMap::new(),
            output_checkpoints: BTreeMap::new(),
            results: serde_json::Value::Null,
            wall_time_secs: 0.0,
        }
    }

    pub fn input_checkpoint(&mut self, path: &Path) -> Result<()> {
        self.input_checkpoints
            .insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn output_checkpoint(&mut self, path: &Path) -> Result<()> {
        self.output_checkpoints
            .insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn finish(mut self, started: Instant) -> Self {
        self.wall_time_secs = started.elapsed().as_secs_f64();
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}
