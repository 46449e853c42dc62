use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::mapper::{DEFAULT_NEIGHBORS, DEFAULT_TAU};
use crate::partition::DEFAULT_K;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub endpoint: Option<String>,
    pub dim: Option<usize>,
    pub model: String,
    pub timeout_ms: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self { endpoint: None, dim: None, model: "default".into(), timeout_ms: 30_000 }
    }
}

/// Session settings; every key is optional in the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Partitions proposed per iteration.
    pub k: usize,
    /// Unassigned threshold on the calibrated score.
    pub tau: f64,
    /// Neighbors taken around every exemplar when building training data.
    #[serde(rename = "K")]
    pub neighbors: usize,
    pub seed: u64,
    pub embedder: EmbedderConfig,
    /// File with one stopword per line; the built-in list is used when absent.
    pub stopwords: Option<PathBuf>,
    /// L2 penalty for rule-weight learning.
    pub l2: f64,
    /// Points in the 2D projection of the global view.
    pub projection_sample: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            tau: DEFAULT_TAU,
            neighbors: DEFAULT_NEIGHBORS,
            seed: 0,
            embedder: EmbedderConfig::default(),
            stopwords: None,
            l2: 0.01,
            projection_sample: 2_000,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k < 2 {
            return Err(ConfigError::Invalid(format!("k must be at least 2 (got {})", self.k)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(ConfigError::Invalid(format!("tau must lie in [0, 1] (got {})", self.tau)));
        }
        if self.l2 <= 0.0 || !self.l2.is_finite() {
            return Err(ConfigError::Invalid(format!("l2 must be positive (got {})", self.l2)));
        }
        Ok(())
    }

    /// Stopwords from the configured file, or the built-in English list.
    pub fn load_stopwords(&self) -> Result<Vec<String>, ConfigError> {
        match &self.stopwords {
            Some(path) => Ok(std::fs::read_to_string(path)?
                .lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .collect()),
            None => Ok(crate::analytics::DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect()),
        }
    }

    pub fn learn_config(&self) -> crate::mapper::LearnConfig {
        crate::mapper::LearnConfig { l2: self.l2, tau: self.tau, ..Default::default() }
    }
}
