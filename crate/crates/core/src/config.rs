//! Run configuration: model, optimiser and data options in one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{FeatureMode, DEFAULT_MIN_PARTICLES};
use crate::model::ModelConfig;
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataOptions {
    /// Jets with fewer particles are dropped at ingestion.
    pub min_particles: usize,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    /// Node features for image inputs.
    pub feature_mode: FeatureMode,
    /// Brightest pixels kept per image.
    pub max_points: usize,
}

impl Default for DataOptions {
    fn default() -> Self {
        Self {
            min_particles: DEFAULT_MIN_PARTICLES,
            split: [0.8, 0.1, 0.1],
            feature_mode: FeatureMode::Hep8,
            max_points: 30,
        }
    }
}

impl DataOptions {
    pub fn split_ratios(&self) -> (f64, f64, f64) {
        (self.split[0], self.split[1], self.split[2])
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataOptions,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.max_points == 0 {
            return Err(Error::InvalidArgument("max_points must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON form (sorted keys, no whitespace).
    pub fn digest(&self) -> Result<String> {
        let canonical = serde_json::to_string(&serde_json::to_value(self)?)?;
        Ok(Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
    }
}
