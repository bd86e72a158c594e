//! Temporal dropout: whole time steps are dropped from the input series.
//!
//! A mask holds one value per `(example, step)`; it is the *drop* indicator
//! and is applied as `x̂ₜ = xₜ · (1 − pₜ)`, broadcast over every feature of
//! the step. Hard masks are Bernoulli(α). Soft masks use the Concrete
//! relaxation
//!
//! ```text
//! p̃ = sigmoid((logit(α) + logit(u)) / τ),   u ~ Uniform(0, 1)
//! ```
//!
//! which is differentiable in α through the reparameterisation, so the drop
//! rate can be learned. α is stored as an unconstrained logit `a`,
//! `α = sigmoid(a)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Graph, Tensor, Var};
use crate::data::SeriesBatch;
use crate::error::{Error, Result};

/// Probabilities and uniforms are clamped to `[EPS, 1 − EPS]` before any log-odds.
pub const EPS: f64 = 1e-7;
pub const DEFAULT_RATIO: f64 = 0.3;
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_INIT_ALPHA: f64 = 0.1;

/// How a model perturbs its input series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemporalDropout {
    #[default]
    Disabled,
    /// Fixed-rate Bernoulli dropout of time steps.
    Hard { ratio: f64 },
    /// Concrete relaxation with a learnable rate.
    Concrete { init_alpha: f64, temperature: f64 },
}

impl TemporalDropout {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Disabled => Ok(()),
            Self::Hard { ratio } => TdConfig { ratio, seed: 0 }.validate(),
            Self::Concrete {
                init_alpha,
                temperature,
            } => {
                if !(init_alpha > 0.0 && init_alpha < 1.0) {
                    return Err(Error::invalid("init_alpha", format!("{init_alpha} is outside (0, 1)")));
                }
                ConcreteParam::from_alpha(init_alpha, temperature).map(|_| ())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdConfig {
    pub ratio: f64,
    pub seed: u64,
}

impl Default for TdConfig {
    fn default() -> Self {
        Self {
            ratio: DEFAULT_RATIO,
            seed: 0,
        }
    }
}

impl TdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ratio) {
            return Err(Error::invalid("ratio", format!("{} is outside [0, 1)", self.ratio)));
        }
        Ok(())
    }
}

/// Learnable Concrete drop rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcreteParam {
    pub logit: f64,
    pub temperature: f64,
}

impl ConcreteParam {
    pub fn new(logit: f64, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::invalid("temperature", format!("{temperature} must be > 0")));
        }
        if !logit.is_finite() {
            return Err(Error::invalid("logit", "must be finite"));
        }
        Ok(Self { logit, temperature })
    }

    pub fn from_alpha(alpha: f64, temperature: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid("alpha", format!("{alpha} is outside (0, 1)")));
        }
        Self::new((alpha / (1.0 - alpha)).ln(), temperature)
    }

    pub fn alpha(&self) -> f64 {
        sigmoid(self.logit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Hard,
    Soft,
}

/// Per-`(example, step)` drop values, row-major `(batch, steps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutMask {
    batch: usize,
    steps: usize,
    values: Vec<f64>,
    kind: MaskKind,
}

impl DropoutMask {
    pub fn new(batch: usize, steps: usize, values: Vec<f64>, kind: MaskKind) -> Result<Self> {
        if values.len() != batch * steps {
            return Err(Error::ShapeMismatch {
                op: "dropout_mask",
                lhs: vec![batch, steps],
                rhs: vec![values.len()],
            });
        }
        let ok = match kind {
            MaskKind::Hard => values.iter().all(|&v| v == 0.0 || v == 1.0),
            // saturates to the closed interval in floating point for small τ
            MaskKind::Soft => values.iter().all(|v| (0.0..=1.0).contains(v)),
        };
        if !ok {
            return Err(Error::invalid("mask", format!("values out of range for a {kind:?} mask")));
        }
        Ok(Self {
            batch,
            steps,
            values,
            kind,
        })
    }

    pub fn zeros(batch: usize, steps: usize) -> Self {
        Self {
            batch,
            steps,
            values: vec![0.0; batch * steps],
            kind: MaskKind::Hard,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.batch, self.steps)
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, example: usize, step: usize) -> f64 {
        self.values[example * self.steps + step]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Examples `start..end`.
    pub fn rows(&self, start: usize, end: usize) -> Self {
        Self {
            batch: end - start,
            steps: self.steps,
            values: self.values[start * self.steps..end * self.steps].to_vec(),
            kind: self.kind,
        }
    }

    /// Round a soft mask at 0.5.
    pub fn thresholded(&self) -> Self {
        Self {
            batch: self.batch,
            steps: self.steps,
            values: self.values.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect(),
            kind: MaskKind::Hard,
        }
    }
}

/// I.i.d. Bernoulli(`ratio`) drop mask.
pub fn sample_hard_mask(cfg: &TdConfig, batch: usize, steps: usize, rng: &mut impl Rng) -> Result<DropoutMask> {
    cfg.validate()?;
    if cfg.ratio == 0.0 {
        return Ok(DropoutMask::zeros(batch, steps));
    }
    let values = (0..batch * steps)
        .map(|_| if rng.random::<f64>() < cfg.ratio { 1.0 } else { 0.0 })
        .collect();
    DropoutMask::new(batch, steps, values, MaskKind::Hard)
}

/// Uniform draws clamped to `[EPS, 1 − EPS]`.
pub fn sample_uniforms(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| clamp_unit(rng.random::<f64>())).collect()
}

fn clamp_unit(u: f64) -> f64 {
    u.clamp(EPS, 1.0 - EPS)
}

fn log_odds(p: f64) -> f64 {
    let p = clamp_unit(p);
    p.ln() - (1.0 - p).ln()
}

/// Scalar Concrete sample for drop rate `alpha` and uniform draw `u`.
pub fn concrete_value(alpha: f64, u: f64, temperature: f64) -> f64 {
    sigmoid((log_odds(alpha) + log_odds(u)) / temperature)
}

pub fn sample_soft_mask(
    param: &ConcreteParam,
    batch: usize,
    steps: usize,
    uniforms: &[f64],
) -> Result<DropoutMask> {
    ConcreteParam::new(param.logit, param.temperature)?;
    if uniforms.len() != batch * steps {
        return Err(Error::ShapeMismatch {
            op: "sample_soft_mask",
            lhs: vec![batch, steps],
            rhs: vec![uniforms.len()],
        });
    }
    let alpha = param.alpha();
    let values = uniforms
        .iter()
        .map(|&u| concrete_value(alpha, u, param.temperature))
        .collect();
    DropoutMask::new(batch, steps, values, MaskKind::Soft)
}

/// Differentiable soft mask of shape `(batch, steps)` built from a scalar
/// logit node, so gradients reach the drop rate.
pub fn soft_mask_on_graph(
    g: &mut Graph,
    logit: Var,
    temperature: f64,
    uniforms: &[f64],
    batch: usize,
    steps: usize,
) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature", format!("{temperature} must be > 0")));
    }
    let noise: Vec<f64> = uniforms.iter().map(|&u| log_odds(u)).collect();
    let noise = g.constant(Tensor::new(vec![batch, steps], noise)?);
    let alpha = g.sigmoid(logit);
    let alpha = g.clamp(alpha, EPS, 1.0 - EPS);
    let log_a = g.log(alpha);
    let one_minus = g.rsub(1.0, alpha);
    let log_b = g.log(one_minus);
    let rate_logit = g.sub(log_a, log_b)?;
    let rate_logit = g.reshape(rate_logit, &[1, 1])?;
    let z = g.add(rate_logit, noise)?;
    let z = g.scale(z, 1.0 / temperature);
    Ok(g.sigmoid(z))
}

/// `x̂ = x ⊙ (1 − p)` with `p` broadcast over features. Returns a new batch.
pub fn apply_mask(batch: &SeriesBatch, mask: &DropoutMask) -> Result<SeriesBatch> {
    if mask.shape() != (batch.len(), batch.steps()) {
        return Err(Error::ShapeMismatch {
            op: "apply_mask",
            lhs: vec![batch.len(), batch.steps()],
            rhs: vec![mask.batch, mask.steps],
        });
    }
    let mut out = batch.clone();
    let f = batch.features();
    for (k, row) in out.inputs_mut().chunks_mut(f).enumerate() {
        let p = mask.values[k];
        if p != 0.0 {
            let keep = 1.0 - p;
            row.iter_mut().for_each(|x| *x *= keep);
        }
    }
    Ok(out)
}
