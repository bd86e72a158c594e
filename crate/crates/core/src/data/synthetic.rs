//! Synthetic regression tasks with a known conditional mean and variance.
//!
//! Feature 0 carries the signal; the remaining features are noisy copies of
//! it. The target is `y = g(x) + ε`, `ε ~ N(0, σ²(x))`, and both `g(x)` and
//! `σ²(x)` are returned next to the batch so calibration can be scored
//! against the truth.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SeriesBatch;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// `g(x)` = mean of feature 0 over all steps.
    MeanSignal,
    /// `g(x)` = least-squares slope of feature 0 against time scaled to `[0, 1]`.
    Trend,
    /// `g(x)` = position of the maximum of feature 0, scaled to `[0, 1]`.
    SeasonalPeak,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 3] = [Self::MeanSignal, Self::Trend, Self::SeasonalPeak];

    pub fn name(self) -> &'static str {
        match self {
            Self::MeanSignal => "mean_signal",
            Self::Trend => "trend",
            Self::SeasonalPeak => "seasonal_peak",
        }
    }

    /// Ground-truth conditional mean for a realised feature-0 series.
    pub fn target(self, signal: &[f64]) -> f64 {
        match self {
            Self::MeanSignal => mean(signal),
            Self::Trend => slope(signal),
            Self::SeasonalPeak => {
                if signal.len() < 2 {
                    return 0.0;
                }
                let mut best = 0;
                for (t, &v) in signal.iter().enumerate() {
                    if v > signal[best] {
                        best = t;
                    }
                }
                best as f64 / (signal.len() - 1) as f64
            }
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::invalid(
                    "kind",
                    format!("unknown generator `{s}` (expected mean_signal, trend or seasonal_peak)"),
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: GeneratorKind,
    pub n: usize,
    pub steps: usize,
    pub features: usize,
    /// Homoscedastic noise level; ignored when `heteroscedastic` is set.
    pub noise_std: f64,
    /// Use `σ(x) = 0.05 + 0.2 |mean(x₀)|` instead of `noise_std`.
    pub heteroscedastic: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::MeanSignal,
            n: 1000,
            steps: 24,
            features: 3,
            noise_std: 0.1,
            heteroscedastic: false,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n", "need at least one series"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps", "need at least one time step"));
        }
        if self.features == 0 {
            return Err(Error::invalid("features", "need at least one feature"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std", format!("{} is not >= 0", self.noise_std)));
        }
        Ok(())
    }

    pub fn noise_std_for(&self, signal: &[f64]) -> f64 {
        if self.heteroscedastic {
            heteroscedastic_std(signal)
        } else {
            self.noise_std
        }
    }
}

pub fn heteroscedastic_std(signal: &[f64]) -> f64 {
    0.05 + 0.2 * mean(signal).abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub batch: SeriesBatch,
    pub true_mean: Vec<f64>,
    pub true_var: Vec<f64>,
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let (n, t_len, f_len) = (spec.n, spec.steps, spec.features);
    let mut rng = rng::stream(spec.seed, 0);
    let mut inputs = Vec::with_capacity(n * t_len * f_len);
    let mut targets = Vec::with_capacity(n);
    let mut true_mean = Vec::with_capacity(n);
    let mut true_var = Vec::with_capacity(n);
    let mut signal = vec![0.0; t_len];

    for _ in 0..n {
        fill_signal(spec.kind, &mut signal, &mut rng);
        for &x0 in &signal {
            inputs.push(x0);
            for _ in 1..f_len {
                let z: f64 = rng.sample(StandardNormal);
                inputs.push(0.5 * x0 + 0.5 * z);
            }
        }
        let g = spec.kind.target(&signal);
        let sd = spec.noise_std_for(&signal);
        let eps: f64 = rng.sample(StandardNormal);
        targets.push(g + sd * eps);
        true_mean.push(g);
        true_var.push(sd * sd);
    }

    let batch = SeriesBatch::new(
        (0..n).map(|i| format!("s{i:06}")).collect(),
        t_len,
        f_len,
        inputs,
        vec![true; n * t_len],
        vec![t_len; n],
        targets,
    )?;
    Ok(SyntheticDataset {
        spec: spec.clone(),
        batch,
        true_mean,
        true_var,
    })
}

fn fill_signal(kind: GeneratorKind, out: &mut [f64], rng: &mut rng::Rng) {
    let t_len = out.len();
    let span = (t_len.max(2) - 1) as f64;
    let level: f64 = rng.sample(StandardNormal);
    match kind {
        GeneratorKind::MeanSignal => {
            for v in out.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = level + z;
            }
        }
        GeneratorKind::Trend => {
            let slope: f64 = rng.sample(StandardNormal);
            for (t, v) in out.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *v = level + slope * t as f64 / span + 0.3 * z;
            }
        }
        GeneratorKind::SeasonalPeak => {
            let amp = rng.random_range(1.0..2.0);
            let center = rng.random_range(0.0..=span);
            let width = (t_len as f64 / 8.0).max(1.0);
            for (t, v) in out.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                let d = t as f64 - center;
                *v = 0.5 * level + amp * (-d * d / (2.0 * width * width)).exp() + 0.2 * z;
            }
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn slope(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let span = (n - 1) as f64;
    let tbar = 0.5;
    let xbar = mean(xs);
    let (mut num, mut den) = (0.0, 0.0);
    for (t, &x) in xs.iter().enumerate() {
        let dt = t as f64 / span - tbar;
        num += dt * (x - xbar);
        den += dt * dt;
    }
    num / den
}
