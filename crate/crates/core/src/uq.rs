//! Monte Carlo inference and uncertainty decomposition.
//!
//! `L` stochastic forward passes give samples `(μₗ, σ²ₗ)` per example:
//!
//! ```text
//! μ_EU  = mean(μₗ)
//! σ²_EU = Σ (μₗ − μ_EU)² / (L − 1)
//! AU    = mean(σ²ₗ)
//! PU    = σ²_EU + AU
//! ```

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::SeriesBatch;
use crate::error::{Error, Result};
use crate::nn::{ChunkPlan, SequenceRegressor};
use crate::rng::{self, Rng};
use crate::tempdrop::{sample_hard_mask, sample_soft_mask, sample_uniforms, TdConfig, TemporalDropout};

pub const DEFAULT_NUM_SAMPLES: usize = 20;

/// What varies between Monte Carlo passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Bernoulli time-step masks.
    #[default]
    TemporalHard,
    /// Concrete soft masks with the model's learned rate.
    TemporalConcrete,
    /// Standard dropout inside the network (MC-Dropout).
    HiddenDropout,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::TemporalHard, Source::TemporalConcrete, Source::HiddenDropout];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::TemporalHard => "temporal_hard",
            Source::TemporalConcrete => "temporal_concrete",
            Source::HiddenDropout => "hidden_dropout",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Source::ALL
            .into_iter()
            .find(|src| src.as_str() == s)
            .ok_or_else(|| Error::invalid("source", format!("unknown source `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub num_samples: usize,
    pub source: Source,
    pub seed: u64,
    /// Inference drop ratio for `temporal_hard`. Defaults to the model's own
    /// rate (its fixed ratio, or its learned α).
    pub ratio: Option<f64>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            num_samples: DEFAULT_NUM_SAMPLES,
            source: Source::TemporalHard,
            seed: 0,
            ratio: None,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples < 2 {
            return Err(Error::invalid(
                "num_samples",
                format!("need at least 2 samples for a variance, got {}", self.num_samples),
            ));
        }
        if let Some(r) = self.ratio {
            TdConfig { ratio: r, seed: 0 }.validate()?;
        }
        Ok(())
    }
}

/// One stochastic forward pass over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSample {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

/// A model that can produce stochastic predictions under a [`McConfig`].
pub trait StochasticRegressor {
    fn sample(&self, batch: &SeriesBatch, cfg: &McConfig, rng: &mut Rng) -> Result<PredictiveSample>;
}

impl StochasticRegressor for SequenceRegressor {
    fn sample(&self, batch: &SeriesBatch, cfg: &McConfig, rng: &mut Rng) -> Result<PredictiveSample> {
        let (mu, var) = match cfg.source {
            Source::TemporalHard => {
                let td = TdConfig {
                    ratio: cfg.ratio.unwrap_or_else(|| self.dropout_rate()),
                    seed: cfg.seed,
                };
                self.run_chunks(batch, rng, |chunk, rng| {
                    let mask = sample_hard_mask(&td, chunk.len(), chunk.steps(), rng)?;
                    Ok(ChunkPlan::Mask(mask))
                })?
            }
            Source::TemporalConcrete => {
                let param = self.concrete_param().ok_or_else(|| {
                    Error::invalid(
                        "source",
                        format!(
                            "temporal_concrete needs a learnable rate, model uses {}",
                            describe(self.temporal())
                        ),
                    )
                })?;
                self.run_chunks(batch, rng, |chunk, rng| {
                    let u = sample_uniforms(chunk.len() * chunk.steps(), rng);
                    Ok(ChunkPlan::Mask(sample_soft_mask(&param, chunk.len(), chunk.steps(), &u)?))
                })?
            }
            Source::HiddenDropout => self.run_chunks(batch, rng, |_, _| Ok(ChunkPlan::HiddenDropout))?,
        };
        Ok(PredictiveSample { mu, var })
    }
}

fn describe(t: TemporalDropout) -> &'static str {
    match t {
        TemporalDropout::Disabled => "no temporal dropout",
        TemporalDropout::Hard { .. } => "fixed-rate temporal dropout",
        TemporalDropout::Concrete { .. } => "concrete temporal dropout",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub mu_eu: Vec<f64>,
    pub var_eu: Vec<f64>,
    pub au: Vec<f64>,
    pub pu: Vec<f64>,
    /// `samples_mu[l][i]`: sample `l`, example `i`.
    pub samples_mu: Vec<Vec<f64>>,
    pub samples_var: Vec<Vec<f64>>,
}

impl UncertaintyReport {
    /// Aggregate raw samples. Needs at least two samples of equal length.
    pub fn from_samples(samples_mu: Vec<Vec<f64>>, samples_var: Vec<Vec<f64>>) -> Result<Self> {
        let l = samples_mu.len();
        if l < 2 || samples_var.len() != l {
            return Err(Error::invalid("num_samples", format!("need at least 2 samples, got {l}")));
        }
        let n = samples_mu[0].len();
        if samples_mu.iter().chain(&samples_var).any(|s| s.len() != n) {
            return Err(Error::invalid("samples", "samples differ in length"));
        }
        let lf = l as f64;
        let mut mu_eu = Vec::with_capacity(n);
        let mut var_eu = Vec::with_capacity(n);
        let mut au = Vec::with_capacity(n);
        for i in 0..n {
            // shifted sums: identical samples reproduce the sample exactly, with zero variance
            let pivot = samples_mu[0][i];
            let (mut s, mut ss) = (0.0, 0.0);
            for sample in &samples_mu {
                let d = sample[i] - pivot;
                s += d;
                ss += d * d;
            }
            mu_eu.push(pivot + s / lf);
            var_eu.push(((ss - s * s / lf) / (lf - 1.0)).max(0.0));
            let base = samples_var[0][i];
            au.push(if samples_var.iter().all(|v| v[i] == base) {
                base
            } else {
                samples_var.iter().map(|v| v[i]).sum::<f64>() / lf
            });
        }
        let pu = var_eu.iter().zip(&au).map(|(e, a)| e + a).collect();
        Ok(Self {
            mu_eu,
            var_eu,
            au,
            pu,
            samples_mu,
            samples_var,
        })
    }

    pub fn len(&self) -> usize {
        self.mu_eu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_eu.is_empty()
    }

    pub fn num_samples(&self) -> usize {
        self.samples_mu.len()
    }

    /// Mean of `√PU` over examples.
    pub fn mean_std_pu(&self) -> f64 {
        mean(self.pu.iter().map(|p| p.sqrt()))
    }

    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            n: self.len(),
            num_samples: self.num_samples(),
            mean_mu_eu: mean(self.mu_eu.iter().copied()),
            mean_var_eu: mean(self.var_eu.iter().copied()),
            mean_au: mean(self.au.iter().copied()),
            mean_pu: mean(self.pu.iter().copied()),
            mean_std_pu: self.mean_std_pu(),
        }
    }

    /// One row per example: `series_id, target, mu_eu, var_eu, au, pu`.
    pub fn write_csv(&self, path: impl AsRef<Path>, ids: &[String], targets: &[f64]) -> Result<()> {
        if ids.len() != self.len() || targets.len() != self.len() {
            return Err(Error::invalid("targets", "one id and target per example required"));
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["series_id", "target", "mu_eu", "var_eu", "au", "pu"])?;
        for i in 0..self.len() {
            w.write_record([
                ids[i].clone(),
                targets[i].to_string(),
                self.mu_eu[i].to_string(),
                self.var_eu[i].to_string(),
                self.au[i].to_string(),
                self.pu[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, &self.summary())?;
        writeln!(f)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub n: usize,
    pub num_samples: usize,
    pub mean_mu_eu: f64,
    pub mean_var_eu: f64,
    pub mean_au: f64,
    pub mean_pu: f64,
    pub mean_std_pu: f64,
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    xs.sum::<f64>() / n as f64
}

/// Run `cfg.num_samples` stochastic passes and decompose the uncertainty.
/// Sample `l` draws from its own stream, so results do not depend on chunking
/// or evaluation order.
pub fn mc_predict(model: &impl StochasticRegressor, batch: &SeriesBatch, cfg: &McConfig) -> Result<UncertaintyReport> {
    cfg.validate()?;
    let mut samples_mu = Vec::with_capacity(cfg.num_samples);
    let mut samples_var = Vec::with_capacity(cfg.num_samples);
    for l in 0..cfg.num_samples {
        let mut rng = rng::stream(cfg.seed, rng::tags::MC_BASE + l as u64);
        let s = model.sample(batch, cfg, &mut rng)?;
        if s.mu.len() != batch.len() || s.var.len() != batch.len() {
            return Err(Error::invalid("sample", format!("sample {l} has the wrong length")));
        }
        if s.mu.iter().chain(&s.var).any(|v| v.is_nan()) {
            return Err(Error::NanSample { index: l });
        }
        samples_mu.push(s.mu);
        samples_var.push(s.var);
    }
    UncertaintyReport::from_samples(samples_mu, samples_var)
}

/// How a confidence level becomes an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    /// `μ_EU ± z·√PU` from a moment-matched Gaussian.
    #[default]
    Gaussian,
    /// Central quantiles of the equal-weight mixture of the sample Gaussians.
    Mixture,
}

impl FromStr for IntervalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "mixture" => Ok(Self::Mixture),
            _ => Err(Error::invalid("interval", format!("unknown interval method `{s}`"))),
        }
    }
}

/// Two-sided standard-normal quantile `z_{(1+c)/2}`.
pub fn z_score(confidence: f64) -> Result<f64> {
    check_confidence(confidence)?;
    let n = Normal::standard();
    Ok(n.inverse_cdf(0.5 + confidence / 2.0))
}

fn check_confidence(c: f64) -> Result<()> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::invalid("confidence", format!("{c} is outside (0, 1)")));
    }
    Ok(())
}

/// Central `confidence`-level interval per example.
pub fn predictive_interval(
    report: &UncertaintyReport,
    confidence: f64,
    method: IntervalMethod,
) -> Result<Vec<(f64, f64)>> {
    check_confidence(confidence)?;
    match method {
        IntervalMethod::Gaussian => {
            let z = z_score(confidence)?;
            Ok(report
                .mu_eu
                .iter()
                .zip(&report.pu)
                .map(|(&m, &pu)| {
                    let half = z * pu.sqrt();
                    (m - half, m + half)
                })
                .collect())
        }
        IntervalMethod::Mixture => {
            let lo_q = 0.5 - confidence / 2.0;
            let hi_q = 0.5 + confidence / 2.0;
            Ok((0..report.len())
                .map(|i| {
                    let comps: Vec<(f64, f64)> = report
                        .samples_mu
                        .iter()
                        .zip(&report.samples_var)
                        .map(|(m, v)| (m[i], v[i].max(0.0).sqrt()))
                        .collect();
                    (mixture_quantile(&comps, lo_q), mixture_quantile(&comps, hi_q))
                })
                .collect())
        }
    }
}

fn mixture_cdf(comps: &[(f64, f64)], x: f64) -> f64 {
    let total: f64 = comps
        .iter()
        .map(|&(m, s)| {
            if s > 0.0 && s.is_finite() {
                Normal::new(m, s).map_or(0.5, |n| n.cdf(x))
            } else if s.is_infinite() {
                0.5
            } else {
                f64::from(x >= m)
            }
        })
        .sum();
    total / comps.len() as f64
}

fn mixture_quantile(comps: &[(f64, f64)], q: f64) -> f64 {
    if comps.iter().any(|&(_, s)| s.is_infinite()) {
        return if q < 0.5 { f64::NEG_INFINITY } else { f64::INFINITY };
    }
    let mut lo = comps.iter().map(|&(m, s)| m - 40.0 * s).fold(f64::INFINITY, f64::min);
    let mut hi = comps.iter().map(|&(m, s)| m + 40.0 * s).fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mixture_cdf(comps, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}
