//! Pipeline configuration file. Every section and key is optional and
//! falls back to the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::Pooling;
use crate::sae::TrainConfig;
use crate::scorer::Bm25Params;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaeConfig {
    pub m: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for SaeConfig {
    fn default() -> Self {
        Self {
            m: 32_768,
            k: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeConfig {
    pub alpha_doc: f64,
    pub alpha_query: f64,
    pub pooling: Pooling,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self {
            alpha_doc: 0.5,
            alpha_query: 0.5,
            pooling: Pooling::Sum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub bm25: Bm25Params,
    pub top_n: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            bm25: Bm25Params::default(),
            top_n: 1000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sae: SaeConfig,
    pub train: TrainConfig,
    pub encode: EncodeConfig,
    pub search: SearchConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.sae.k == 0 || self.sae.k > self.sae.m {
            return Err(Error::InvalidConfig(format!(
                "sae.k must be in 1..={}, got {}",
                self.sae.m, self.sae.k
            )));
        }
        for a in [self.encode.alpha_doc, self.encode.alpha_query] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidPhi(a));
            }
        }
        if self.search.top_n == 0 {
            return Err(Error::InvalidConfig("search.top_n must be positive".into()));
        }
        self.train.validate()?;
        self.search.bm25.validate()
    }
}
