use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ParamSet, SequenceRegressor};
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::tempdrop::TemporalDropout;

pub const CHECKPOINT_FORMAT: &str = "mctd-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    input_features: usize,
    temporal: TemporalDropout,
    /// Informational; the authoritative value lives in `params`.
    learned_alpha: Option<f64>,
    params: ParamSet,
    bn_running_mean: Vec<f64>,
    bn_running_var: Vec<f64>,
    normalization: Option<NormStats>,
}

pub fn to_json(model: &SequenceRegressor) -> Result<String> {
    let (mean, var) = model.bn_running_stats();
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        input_features: model.input_features(),
        temporal: model.temporal(),
        learned_alpha: model.learned_alpha(),
        params: model.params().clone(),
        bn_running_mean: mean.to_vec(),
        bn_running_var: var.to_vec(),
        normalization: model.normalization().cloned(),
    };
    Ok(serde_json::to_string(&ckpt)?)
}

pub fn from_json(text: &str) -> Result<SequenceRegressor> {
    let ckpt: Checkpoint = serde_json::from_str(text)?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format `{}`", ckpt.format)));
    }
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", ckpt.version)));
    }
    let mut model = SequenceRegressor::from_parts(ckpt.config, ckpt.input_features, ckpt.temporal, ckpt.params)?;
    model.set_bn_running_stats(ckpt.bn_running_mean, ckpt.bn_running_var)?;
    if let Some(stats) = ckpt.normalization {
        model.set_normalization(stats)?;
    }
    Ok(model)
}

pub fn save(model: &SequenceRegressor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_json(model)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<SequenceRegressor> {
    from_json(&fs::read_to_string(path)?)
}
