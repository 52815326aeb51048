//! Serializable mirror of [`TrainConfig`], used for config files and for the
//! configuration echo stored in checkpoints.

use std::path::Path;

use entd_core::{ModelKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Field-for-field copy of [`TrainConfig`]; missing fields take the library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigRecord {
    pub model: String,
    pub rank: usize,
    pub inducing_u: usize,
    pub inducing_v: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub ng_rate: f64,
    pub zeta: f64,
    pub seed: u64,
    pub bandwidth: f64,
    pub learn_bandwidth: bool,
    pub early_stop: bool,
}

impl Default for ConfigRecord {
    fn default() -> Self {
        ConfigRecord::from(&TrainConfig::default())
    }
}

impl From<&TrainConfig> for ConfigRecord {
    fn from(c: &TrainConfig) -> Self {
        ConfigRecord {
            model: c.model.as_str().to_string(),
            rank: c.rank,
            inducing_u: c.inducing_u,
            inducing_v: c.inducing_v,
            batch_size: c.batch_size,
            epochs: c.epochs,
            lr: c.lr,
            ng_rate: c.ng_rate,
            zeta: c.zeta,
            seed: c.seed,
            bandwidth: c.bandwidth,
            learn_bandwidth: c.learn_bandwidth,
            early_stop: c.early_stop,
        }
    }
}

impl ConfigRecord {
    pub fn to_config(&self) -> std::result::Result<TrainConfig, String> {
        let model = ModelKind::parse(&self.model)
            .ok_or_else(|| format!("unknown model {:?} (expected gptf-probit, gptf-pg or ented)", self.model))?;
        Ok(TrainConfig {
            model,
            rank: self.rank,
            inducing_u: self.inducing_u,
            inducing_v: self.inducing_v,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            ng_rate: self.ng_rate,
            zeta: self.zeta,
            seed: self.seed,
            bandwidth: self.bandwidth,
            learn_bandwidth: self.learn_bandwidth,
            early_stop: self.early_stop,
        })
    }

    /// Reads a JSON config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}
