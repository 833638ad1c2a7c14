//! Output directories and run manifests.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::exit::Failure;

/// Everything needed to re-run a command: feed `config` back through `--config
/// manifest.json` with the same command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub corpus_hash: Option<String>,
    pub code_version: String,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
    /// Artifact file names relative to the output directory.
    pub artifacts: Vec<String>,
}

/// A run's output directory. Refuses to reuse a non-empty directory unless overwriting.
pub struct Output {
    dir: PathBuf,
    artifacts: Vec<String>,
    started: Instant,
    started_unix: u64,
}

impl Output {
    pub fn create(dir: &Path, overwrite: bool) -> Result<Self, Failure> {
        if dir.exists() {
            let non_empty = std::fs::read_dir(dir)
                .with_context(|| format!("cannot read output directory {}", dir.display()))
                .map_err(Failure::input)?
                .next()
                .is_some();
            if non_empty && !overwrite {
                return Err(Failure::input(anyhow::anyhow!(
                    "output directory {} is not empty; pass --overwrite to replace its contents",
                    dir.display()
                )));
            }
        }
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))
            .map_err(Failure::input)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Notes an artifact written by other means.
    pub fn record(&mut self, name: &str) {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), Failure> {
        let path = self.path(name);
        std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        log::info!("wrote {}", path.display());
        self.record(name);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(value).context("serialising report")?;
        self.write(name, &(text + "\n"))
    }

    pub fn finish(mut self, command: &str, config: &RunConfig, corpus_hash: Option<String>) -> Result<(), Failure> {
        let manifest = RunManifest {
            command: command.to_string(),
            config: config.clone(),
            corpus_hash,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_seconds: self.started_unix,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            artifacts: self.artifacts.clone(),
        };
        self.write_json("manifest.json", &manifest)
    }
}
