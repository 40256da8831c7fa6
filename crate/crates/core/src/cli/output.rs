//! Artifacts with embedded manifests.

use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{Command, ExperimentConfig};
use crate::error::Result;

/// Hex SHA-256 of `blob <len>\0<bytes>`, the git object layout.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn num(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactRecord {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub seed: u64,
    pub input_hash: &'a str,
    pub config: &'a ExperimentConfig,
    pub output_dir: &'a std::path::Path,
    pub workers: usize,
    pub parallel: bool,
    pub wall_seconds: f64,
    pub status: &'static str,
    pub error: Option<String>,
    pub artifacts: &'a [ArtifactRecord],
    /// Headline numbers, including those kept out of the CSVs (timings).
    pub results: &'a serde_json::Map<String, serde_json::Value>,
}

/// Output directory plus the manifest header shared by every artifact.
pub struct RunOutput {
    pub command: Command,
    pub dir: PathBuf,
    pub input_hash: String,
    header: String,
    artifacts: Vec<ArtifactRecord>,
    results: serde_json::Map<String, serde_json::Value>,
}

impl RunOutput {
    pub fn new(command: Command, cfg: &ExperimentConfig) -> Result<Self> {
        let dir = cfg.output_dir.clone();
        fs::create_dir_all(&dir)?;
        let config_json = serde_json::to_string(cfg).expect("config serialises");
        let input_hash = content_hash(format!("{}\n{config_json}", command.name()).as_bytes());
        let header = format!(
            "# {} {} {}\n# seed: {}\n# input_hash: {}\n# config: {}\n",
            env!("CARGO_PKG_NAME"),
            env!("CARGO_PKG_VERSION"),
            command.name(),
            cfg.seed,
            input_hash,
            config_json
        );
        Ok(Self { command, dir, input_hash, header, artifacts: Vec::new(), results: serde_json::Map::new() })
    }

    fn write(&mut self, name: &str, body: &str) -> Result<()> {
        let text = format!("{}{}", self.header, body);
        fs::write(self.dir.join(name), &text)?;
        self.artifacts.push(ArtifactRecord { file: name.to_string(), sha256: content_hash(text.as_bytes()) });
        Ok(())
    }

    pub fn csv(&mut self, name: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut body = columns.join(",");
        body.push('\n');
        for r in rows {
            body.push_str(&r.join(","));
            body.push('\n');
        }
        self.write(name, &body)
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<()> {
        self.write(name, body)
    }

    /// Records `key` in the manifest's `results`.
    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.results.insert(key.to_string(), serde_json::to_value(value).expect("result serialises"));
    }

    pub fn artifacts(&self) -> &[ArtifactRecord] {
        &self.artifacts
    }

    /// Writes `manifest-<subcommand>.json` and returns its path.
    pub fn finish(&self, cfg: &ExperimentConfig, wall_seconds: f64, error: Option<String>) -> Result<PathBuf> {
        let m = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.command.name(),
            seed: cfg.seed,
            input_hash: &self.input_hash,
            config: cfg,
            output_dir: &cfg.output_dir,
            workers: cfg.workers,
            parallel: crate::par::is_parallel(),
            wall_seconds,
            status: if error.is_some() { "numerical_failure" } else { "ok" },
            error,
            artifacts: &self.artifacts,
            results: &self.results,
        };
        let path = self.dir.join(format!("manifest-{}.json", self.command.name()));
        fs::write(&path, serde_json::to_string_pretty(&m).expect("manifest serialises"))?;
        Ok(path)
    }
}
