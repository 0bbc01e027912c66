//! The persisted run configuration: loaded from `--config`, overridden by
//! flags, and echoed into the output directory as `config.json`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dvfi_core::ftm::FtmParams;
use dvfi_core::image::FlipAxis;
use dvfi_core::model::TrainConfig;
use dvfi_core::synth::SynthParams;
use serde::{Deserialize, Serialize};

pub const ECHO_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    pub command: String,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub ftm: FtmParams,
    pub augment: AugmentOptions,
    pub synth: SynthOptions,
    pub train: TrainConfig,
    pub train_io: TrainIo,
    pub eval: EvalOptions,
    pub inspect: InspectOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentOptions {
    /// `[top, left, height, width]` applied to every sequence before FTM.
    pub crop: Option<[usize; 4]>,
    /// Flips applied in order before FTM.
    pub flips: Vec<FlipAxis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    pub count: usize,
    pub params: SynthParams,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            count: 100,
            params: SynthParams::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainIo {
    /// Directory of a previous `train` run to continue from.
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Directory of a `train` run holding `checkpoint.bin` and `checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
    pub threshold: f64,
    /// Scores the ground truth against itself (no checkpoint needed).
    pub sanity: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            checkpoint: None,
            threshold: 0.5,
            sanity: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InspectOptions {
    /// D-map image to visualize; defaults to the sample's `dgt.png`.
    pub dmap: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_slice(&bytes).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn input(&self) -> Result<&Path> {
        match &self.input {
            Some(p) => Ok(p),
            None => bail!("`{}` needs an input path (--input)", self.command),
        }
    }

    pub fn output(&self) -> Result<&Path> {
        match &self.output {
            Some(p) => Ok(p),
            None => bail!("`{}` needs an output path (--out)", self.command),
        }
    }
}
