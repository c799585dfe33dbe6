//! Run manifests: everything needed to repeat a run.

use std::fs;
use std::path::{Path, PathBuf};

use pointseg::config::PipelineConfig;
use pointseg::io::{SynthKind, SynthParams};
use serde::{Deserialize, Serialize};

use crate::args::{Method, SweepParam};
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Subcommand that produced the run.
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    /// Absolute input paths.
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub rng_seed: u64,
    /// Resolved configuration; absent for `synth`, which runs no pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<PipelineConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub params: SynthParams,
}

impl RunManifest {
    pub fn new(command: &str, inputs: Vec<PathBuf>, out_dir: PathBuf, rng_seed: u64) -> Self {
        RunManifest {
            tool: "pointseg".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            method: None,
            inputs,
            out_dir,
            rng_seed,
            config: None,
            sweep: None,
            synth: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a run manifest: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

/// Absolute form of a path, without resolving symlinks.
pub fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
