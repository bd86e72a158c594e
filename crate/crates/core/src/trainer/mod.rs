//! Training loop, early stopping and experiment orchestration.

mod early_stopping;
mod experiment;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use early_stopping::{EarlyStopping, Verdict};
pub use experiment::{
    aggregate, evaluate_model, fit_and_evaluate, ratio_sweep, run_kfold, write_sweep_csv, EvalConfig, FoldRecord,
    KFoldSummary, MetricStats, RunOutcome, RunRecord, RunSettings, SweepRow, DEFAULT_FOLDS, DEFAULT_VAL_FRACTION,
};

use crate::autodiff::{Graph, Tensor};
use crate::data::{NormStats, SeriesBatch};
use crate::error::{Error, Result};
use crate::nn::{loss, AdamConfig, AdamState, ForwardOptions, LossKind, Mode, ModelConfig, SequenceRegressor, TemporalInput};
use crate::rng::{self, tags};
use crate::tempdrop::{sample_hard_mask, DropoutMask, sample_uniforms, TdConfig, TemporalDropout, DEFAULT_INIT_ALPHA, DEFAULT_TEMPERATURE};
use crate::uq::Source;

/// Stochastic regulariser used during training, and by default at inference.
/// Serialised in its string form, e.g. `"td:0.3"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// Deterministic baseline.
    None,
    /// Fixed-ratio temporal dropout.
    Td { ratio: f64 },
    /// Concrete temporal dropout with a learned rate.
    Ctd { init_alpha: f64, temperature: f64 },
    /// Standard dropout resampled at inference.
    HiddenDropout,
}

impl Default for Method {
    fn default() -> Self {
        Method::Td {
            ratio: crate::tempdrop::DEFAULT_RATIO,
        }
    }
}

impl Method {
    pub fn temporal(&self) -> TemporalDropout {
        match *self {
            Method::None | Method::HiddenDropout => TemporalDropout::Disabled,
            Method::Td { ratio } => TemporalDropout::Hard { ratio },
            Method::Ctd {
                init_alpha,
                temperature,
            } => TemporalDropout::Concrete {
                init_alpha,
                temperature,
            },
        }
    }

    /// Monte Carlo source matching the training regulariser.
    pub fn default_source(&self) -> Source {
        match self {
            Method::None | Method::Td { .. } => Source::TemporalHard,
            Method::Ctd { .. } => Source::TemporalConcrete,
            Method::HiddenDropout => Source::HiddenDropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.temporal().validate()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::None => f.write_str("none"),
            Method::Td { ratio } => write!(f, "td:{ratio}"),
            Method::Ctd {
                init_alpha,
                temperature,
            } => write!(f, "ctd:{init_alpha}:{temperature}"),
            Method::HiddenDropout => f.write_str("hidden_dropout"),
        }
    }
}

/// Parses `none`, `td[:ratio]`, `ctd[:init_alpha[:temperature]]`,
/// `hidden_dropout`.
impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let name = parts.next().unwrap_or_default();
        let mut num = |field: &'static str, default: f64| -> Result<f64> {
            match parts.next() {
                None => Ok(default),
                Some(v) => v
                    .parse()
                    .map_err(|_| Error::invalid(field, format!("`{v}` is not a number"))),
            }
        };
        let method = match name {
            "none" => Method::None,
            "hidden_dropout" => Method::HiddenDropout,
            "td" => Method::Td {
                ratio: num("ratio", crate::tempdrop::DEFAULT_RATIO)?,
            },
            "ctd" => Method::Ctd {
                init_alpha: num("init_alpha", DEFAULT_INIT_ALPHA)?,
                temperature: num("temperature", DEFAULT_TEMPERATURE)?,
            },
            _ => {
                return Err(Error::invalid(
                    "method",
                    format!("unknown method `{s}` (expected none, td, ctd or hidden_dropout)"),
                ))
            }
        };
        if parts.next().is_some() {
            return Err(Error::invalid("method", format!("too many parameters in `{s}`")));
        }
        method.validate()?;
        Ok(method)
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> Self {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub loss: LossKind,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate for the Concrete drop-rate logit; defaults to `learning_rate`.
    pub alpha_learning_rate: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::default(),
            loss: LossKind::Nll,
            epochs: 100,
            patience: 5,
            batch_size: 128,
            learning_rate: 1e-3,
            alpha_learning_rate: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be positive"));
        }
        if self.patience >= self.epochs {
            return Err(Error::invalid(
                "patience",
                format!("patience {} must be below epochs {}", self.patience, self.epochs),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        for (name, lr) in [
            ("learning_rate", Some(self.learning_rate)),
            ("alpha_learning_rate", self.alpha_learning_rate),
        ] {
            if let Some(lr) = lr {
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(Error::invalid(name, format!("{lr} must be positive")));
                }
            }
        }
        Ok(())
    }
}

/// A fresh model whose temporal dropout matches `method`.
pub fn build_model(config: &ModelConfig, features: usize, method: &Method, seed: u64) -> Result<SequenceRegressor> {
    SequenceRegressor::new(config.clone(), features, method.temporal(), seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learned drop rate at the end of the epoch.
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Drop rate of the restored model.
    pub learned_alpha: Option<f64>,
}

impl TrainHistory {
    pub fn alpha_trajectory(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.alpha).collect()
    }
}

/// Train `model` on `train`, early-stopping on `val`, and leave it holding
/// the best-validation weights. Normalisation statistics are fitted on
/// `train` and stored in the model.
pub fn train(
    model: &mut SequenceRegressor,
    train: &SeriesBatch,
    val: &SeriesBatch,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation splits must be non-empty".into()));
    }
    let stats = NormStats::fit(train)?;
    model.set_normalization(stats.clone())?;
    let train = stats.normalize(train)?;
    let val = stats.normalize(val)?;

    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..Default::default()
        },
        model.params(),
    );
    if let (Some(i), Some(lr)) = (model.concrete_index(), cfg.alpha_learning_rate) {
        adam.set_learning_rate(i, lr);
    }

    let mut shuffle_rng = rng::stream(cfg.seed, tags::SHUFFLE);
    let mut dropout_rng = rng::stream(cfg.seed, tags::HIDDEN_DROPOUT);
    let mut mask_rng = rng::stream(cfg.seed, tags::TEMPORAL_MASK);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let val_mask = validation_mask(model, &val, cfg.seed)?;
    let mut best = model.clone();
    let mut logs = Vec::new();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train.subset(rows);
            let (n, steps) = (batch.len(), batch.steps());
            let mut g = Graph::new();
            let hard;
            let uniforms;
            let temporal = match model.temporal() {
                TemporalDropout::Disabled => TemporalInput::Off,
                TemporalDropout::Hard { ratio } => {
                    hard = sample_hard_mask(&TdConfig { ratio, seed: cfg.seed }, n, steps, &mut mask_rng)?;
                    TemporalInput::Mask(&hard)
                }
                TemporalDropout::Concrete { .. } => {
                    uniforms = sample_uniforms(n * steps, &mut mask_rng);
                    TemporalInput::Concrete(&uniforms)
                }
            };
            let opts = ForwardOptions {
                mode: Mode::Train,
                hidden_dropout: true,
                temporal,
            };
            let out = model.forward(&mut g, &batch, &opts, &mut dropout_rng)?;
            let y = g.constant(Tensor::new(vec![n, 1], batch.targets().to_vec())?);
            let l = loss(&mut g, cfg.loss, out.mu, out.var, y)?;
            let value = g.value(l).item();
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: value,
                });
            }
            g.backward(l)?;
            let grads: Vec<Tensor> = out.params.iter().map(|&p| g.grad(p)).collect();
            adam.step(model.params_mut(), &grads)?;
            if let Some(s) = &out.batch_stats {
                model.update_bn(s);
            }
            total += value * n as f64;
        }

        let val_loss = validation_loss(model, &val, cfg.loss, val_mask.as_ref())?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                loss: val_loss,
            });
        }
        logs.push(EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss,
            alpha: model.learned_alpha(),
        });
        match stopper.observe(val_loss) {
            Verdict::Improved => best = model.clone(),
            Verdict::Continue => {}
            Verdict::Stop => break,
        }
    }

    *model = best;
    Ok(TrainHistory {
        stopped_early: logs.len() < cfg.epochs,
        epochs: logs,
        best_epoch: stopper.best_epoch().unwrap_or(0),
        best_val_loss: stopper.best().unwrap_or(f64::NAN),
        learned_alpha: model.learned_alpha(),
    })
}

/// The fixed mask a hard temporal-dropout model is validated under. Other
/// models, including Concrete ones, are validated unmasked.
pub fn validation_mask(model: &SequenceRegressor, val: &SeriesBatch, seed: u64) -> Result<Option<DropoutMask>> {
    match model.temporal() {
        TemporalDropout::Hard { ratio } if ratio > 0.0 => {
            let mut rng = rng::stream(seed, tags::VALIDATION_MASK);
            sample_hard_mask(&TdConfig { ratio, seed }, val.len(), val.steps(), &mut rng).map(Some)
        }
        _ => Ok(None),
    }
}

/// Mean loss over an already normalised batch in eval mode, optionally under
/// a mask covering every example.
pub fn validation_loss(
    model: &SequenceRegressor,
    val: &SeriesBatch,
    kind: LossKind,
    mask: Option<&DropoutMask>,
) -> Result<f64> {
    let idx: Vec<usize> = (0..val.len()).collect();
    let mut total = 0.0;
    let mut unused = rng::stream(0, 0);
    for rows in idx.chunks(model.config().eval_chunk) {
        let chunk = val.subset(rows);
        let chunk_mask = mask.map(|m| m.rows(rows[0], rows[0] + rows.len()));
        let opts = ForwardOptions {
            temporal: chunk_mask.as_ref().map_or(TemporalInput::Off, TemporalInput::Mask),
            ..ForwardOptions::eval()
        };
        let mut g = Graph::new();
        let out = model.forward(&mut g, &chunk, &opts, &mut unused)?;
        let y = g.constant(Tensor::new(vec![chunk.len(), 1], chunk.targets().to_vec())?);
        let l = loss(&mut g, kind, out.mu, out.var, y)?;
        total += g.value(l).item() * chunk.len() as f64;
    }
    Ok(total / val.len() as f64)
}
