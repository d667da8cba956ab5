//! Config-file layer. Keys mirror the command-line flags; flags win.

use std::path::Path;

use ksynth::noise::NoiseModel;
use ksynth::unroll::{TrainConfig, UnrollConfig};
use ksynth::KernelMtfProfile;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DEFAULT_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub input_profile: Option<KernelMtfProfile>,
    pub target_profile: Option<KernelMtfProfile>,
    pub eps: Option<f64>,
    pub noise: Option<NoiseModel>,
    pub unroll: Option<UnrollConfig>,
    pub train: Option<TrainConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }
}

/// Effective settings of one run, echoed next to its outputs. Feeding the
/// sidecar back through `--config` with the same command reproduces the run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    #[serde(flatten)]
    pub settings: FileConfig,
    pub args: serde_json::Value,
}

impl RunConfig {
    pub fn write_sidecar(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// `out.ksim` -> `out.config.json`.
pub fn sidecar_path(out: &Path) -> std::path::PathBuf {
    out.with_extension("config.json")
}
