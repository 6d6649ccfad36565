//! Run configuration: one JSON file with a section per module, then flag
//! overrides on top.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cof_core::bench::{Budget, Thresholds};
use cof_core::sampler::SampleConfig;
use cof_core::trainer::TrainConfig;
use cof_core::worlds::SamplerConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: SamplerConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub thresholds: Thresholds,
    pub ablation: AblationSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub train_count: usize,
    pub eval_offset: u64,
    pub seed: u64,
    pub budget: Budget,
    /// Checkpoint cache shared across runs.
    pub cache_dir: Option<PathBuf>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            train_count: 512,
            eval_offset: 1_000_000,
            seed: 0,
            budget: Budget::default(),
            cache_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// The model width follows the codec, and sampling uses the training codec.
    pub fn resolve(mut self) -> Self {
        self.train.model.channels = self.train.codec.channels();
        self.sample.codec = self.train.codec;
        self
    }

    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join("config.json"), text)?;
        Ok(())
    }
}
