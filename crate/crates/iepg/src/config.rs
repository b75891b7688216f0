//! JSON run configuration shared by `train` and `ablate`.

use std::fs;
use std::path::{Path, PathBuf};

use iepg_core::fusion::FusionConfig;
use iepg_core::gec::GecConfig;
use iepg_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SEED_VAR: &str = "IEPG_SEED";

/// Every knob of a run. Unknown keys are rejected at every level, so a typo
/// in an ablation document fails loudly instead of silently running the
/// baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory written by `iepg dataset`.
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
    /// Synthesizer shape, including the variant and ablation flags.
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub gec: GecConfig,
    /// Optimizer steps between periodic checkpoints (0 = only at the end).
    #[serde(default = "default_every")]
    pub checkpoint_every: usize,
}

fn default_every() -> usize {
    100
}

impl RunConfig {
    pub fn new(dataset: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            dataset: dataset.into(),
            out_dir: out_dir.into(),
            train: TrainConfig::default(),
            fusion: FusionConfig::default(),
            gec: GecConfig::default(),
            checkpoint_every: default_every(),
        }
    }

    pub fn from_json(text: &str, path: &Path) -> CliResult<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|source| CliError::Json { path: path.into(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the file and applies the `IEPG_SEED` override.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text, path)?;
        if let Some(seed) = env_seed()? {
            cfg.train.seed = seed;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        self.fusion.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub fn parse_seed(v: &str) -> CliResult<u64> {
    v.trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("{SEED_VAR} must be an unsigned integer, got `{v}`")))
}

/// The `IEPG_SEED` value, if set.
pub fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_VAR) {
        Ok(v) => parse_seed(&v).map(Some),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(_)) => Err(CliError::Usage(format!("{SEED_VAR} is not valid UTF-8"))),
    }
}

/// Explicit flag, then the environment, then `fallback`.
pub fn resolve_seed(flag: Option<u64>, fallback: u64) -> CliResult<u64> {
    match flag {
        Some(s) => Ok(s),
        None => Ok(env_seed()?.unwrap_or(fallback)),
    }
}
