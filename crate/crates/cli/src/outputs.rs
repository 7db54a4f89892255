//! Output-directory artifacts: the run manifest and shared writers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Run provenance written next to every artifact set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_digest: String,
    pub network: String,
    pub method: String,
    pub seeds: Vec<u64>,
    /// Method-specific descriptor (baseline kind, blind set, thresholds).
    pub variant: String,
    /// Root-seed substream labels in use.
    pub rng_streams: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, digest: &str, network: &str, method: &str, seeds: &[u64], variant: String) -> Manifest {
        Manifest {
            tool: "gridtalk".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_digest: digest.to_string(),
            network: network.to_string(),
            method: method.to_string(),
            seeds: seeds.to_vec(),
            variant,
            rng_streams: ["sim", "agent", "init", "episode", "perturb"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("create {}: {e}", dir.display())))?;
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(&path, text)
            .map_err(|e| CliError::Runtime(format!("write {}: {e}", path.display())))
    }

    pub fn read(dir: &Path) -> Result<Manifest, CliError> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("missing manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("write {}: {e}", path.display())))
}
