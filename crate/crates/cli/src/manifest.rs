//! Run manifests: enough to repeat a command exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Inputs that are not part of the configuration.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    /// Observed counts, copied in so the manifest stands on its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<Vec<u64>>,
    /// Checkpoint a fit was resumed from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
    /// Benchmark directory read by `calibrate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub rng_seed: u64,
    /// Configuration after defaults and seed derivation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    pub inputs: Inputs,
    /// Output files relative to the manifest's directory.
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        rtinfer::io::write_json(path, self)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Absolute form of an input path, so a replay from elsewhere finds it.
pub fn absolute(path: &Path) -> PathBuf {
    std::fs::canonicalize(path)
        .or_else(|_| std::path::absolute(path))
        .unwrap_or_else(|_| path.to_path_buf())
}
