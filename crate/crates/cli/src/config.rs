//! Declarative experiment description, read from and echoed as TOML.

use std::fs;
use std::path::{Path, PathBuf};

use mctd_core::data::{generate, holdout, load_csv, CsvSchema, Holdout, SeriesBatch, SyntheticSpec};
use mctd_core::nn::ModelConfig;
use mctd_core::trainer::{EvalConfig, RunSettings, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSource {
    pub path: PathBuf,
    #[serde(flatten)]
    pub schema: CsvSchema,
}

/// Where the series come from and how they are split. A `csv` source takes
/// precedence over `synthetic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub synthetic: Option<SyntheticSpec>,
    pub csv: Option<CsvSource>,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synthetic: Some(SyntheticSpec::default()),
            csv: None,
            val_fraction: 0.1,
            test_fraction: 0.2,
            split_seed: 0,
        }
    }
}

impl DataConfig {
    pub fn load(&self) -> anyhow::Result<SeriesBatch> {
        if let Some(src) = &self.csv {
            return Ok(load_csv(&src.path, &src.schema)?);
        }
        let spec = self.synthetic.clone().unwrap_or_default();
        Ok(generate(&spec)?.batch)
    }

    pub fn split(&self, n: usize) -> anyhow::Result<Holdout> {
        Ok(holdout(n, self.val_fraction, self.test_fraction, self.split_seed)?)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Root under which run directories are created.
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Read a config file. Relative data paths are taken relative to the
    /// file's directory.
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| CliError::config(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(src) = &mut cfg.data.csv {
            if src.path.is_relative() {
                src.path = base.join(&src.path);
            }
        }
        if let Some(dir) = &mut cfg.output_dir {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(cfg)
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            model: self.model.clone(),
            train: self.train.clone(),
            eval: self.eval.clone(),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.settings().validate()?;
        if let Some(spec) = &self.data.synthetic {
            spec.validate()?;
        }
        Ok(())
    }

    /// First 12 hex digits of the SHA-256 of the serialised config.
    pub fn short_hash(&self) -> anyhow::Result<String> {
        Ok(short_hash(self.to_toml()?.as_bytes()))
    }
}

pub fn short_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(6).map(|b| format!("{b:02x}")).collect()
}
