use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use superdrift::config::RunConfig;
use superdrift::io::write_json_atomic;

use crate::args::Resolved;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one invocation. Numeric outputs depend only on `config`, so
/// equal `config_hash` values imply byte-identical CSVs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub command: Vec<String>,
    pub config: RunConfig,
    /// Directory that relative CSV paths in `config` resolve against.
    pub config_base: PathBuf,
    pub outputs: Vec<String>,
    pub status: String,
    pub wall_time_s: f64,
    pub version: String,
}

impl RunManifest {
    pub fn new(resolved: &Resolved, status: impl Into<String>, outputs: &[PathBuf], started: Instant) -> Self {
        RunManifest {
            config_hash: resolved.hash.clone(),
            command: std::env::args().collect(),
            config: resolved.config.clone(),
            config_base: std::path::absolute(&resolved.base).unwrap_or_else(|_| resolved.base.clone()),
            outputs: outputs
                .iter()
                .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
                .collect(),
            status: status.into(),
            wall_time_s: started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        write_json_atomic(&path, self)?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }
}
