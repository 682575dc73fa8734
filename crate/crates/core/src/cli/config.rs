//! Run configuration: a TOML file with one table per module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aceemd::AceemdConfig;
use crate::data::SplitDates;
use crate::model::{ModelConfig, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub primary: Option<PathBuf>,
    pub index_a: Option<PathBuf>,
    pub index_b: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    /// Daily risk-free rate.
    pub rf: f64,
}

/// Everything a command may need. The top-level `seed` replaces every
/// per-section seed, so one number controls all randomness.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataPaths,
    pub splits: SplitDates,
    /// Standalone denoiser used by `decompose` and `denoise`.
    pub aceemd: AceemdConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub backtest: BacktestConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Reads `path`, resolving relative data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.primary, &mut cfg.data.index_a, &mut cfg.data.index_b].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Applies the top-level seed and checks every section.
    pub fn finalize(mut self) -> Result<Self> {
        self.aceemd.seed = self.seed;
        self.model.seed = self.seed;
        self.model.aceemd.seed = self.seed;
        self.train.seed = self.seed;
        self.aceemd.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.splits.validate()?;
        if !self.backtest.rf.is_finite() {
            return Err(Error::Config(format!("backtest.rf must be finite, got {}", self.backtest.rf)));
        }
        Ok(self)
    }
}
