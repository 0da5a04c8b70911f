//! TOML run configuration: model, training, dataset, and suite sections.

use std::fs;
use std::path::Path;

use apct_core::geometry::DatasetConfig;
use apct_core::model::ModelConfig;
use apct_core::training::TrainConfig;
use apct_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub suite: SuiteConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.dataset.validate()?;
        if self.model.n_tokens.max(self.model.group_size) > self.dataset.points {
            return Err(Error::Config(format!(
                "dataset points {} below the {} the tokenizer needs",
                self.dataset.points,
                self.model.n_tokens.max(self.model.group_size)
            )));
        }
        Ok(())
    }
}
