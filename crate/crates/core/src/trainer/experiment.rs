use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, train, Method, TrainConfig, TrainHistory};
use crate::data::{carve_validation, kfold, Holdout, SeriesBatch};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricBundle, DEFAULT_LEVELS};
use crate::nn::{ModelConfig, SequenceRegressor};
use crate::uq::{mc_predict, IntervalMethod, McConfig, Source, UncertaintyReport, DEFAULT_NUM_SAMPLES};

pub const DEFAULT_FOLDS: usize = 5;
/// Share of each fold's training part held out for early stopping.
pub const DEFAULT_VAL_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub num_samples: usize,
    /// Defaults to the source matching the training method.
    pub source: Option<Source>,
    /// Inference ratio for `temporal_hard`; defaults to the model's rate.
    pub ratio: Option<f64>,
    pub interval: IntervalMethod,
    pub levels: Vec<f64>,
    /// Monte Carlo seed; defaults to the training seed.
    pub seed: Option<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            num_samples: DEFAULT_NUM_SAMPLES,
            source: None,
            ratio: None,
            interval: IntervalMethod::Gaussian,
            levels: DEFAULT_LEVELS.to_vec(),
            seed: None,
        }
    }
}

impl EvalConfig {
    pub fn mc_config(&self, method: &Method, seed: u64) -> McConfig {
        McConfig {
            num_samples: self.num_samples,
            source: self.source.unwrap_or_else(|| method.default_source()),
            seed: self.seed.unwrap_or(seed),
            ratio: self.ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mc_config(&Method::None, 0).validate()?;
        if self.levels.is_empty() || self.levels.iter().any(|&c| !(c > 0.0 && c < 1.0)) {
            return Err(Error::invalid("levels", "confidence levels must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Everything needed to train and score one model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: SequenceRegressor,
    pub history: TrainHistory,
    pub report: UncertaintyReport,
    pub metrics: MetricBundle,
}

/// Monte Carlo prediction on raw `test` data and the metrics against its targets.
pub fn evaluate_model(
    model: &SequenceRegressor,
    test: &SeriesBatch,
    eval: &EvalConfig,
    mc: &McConfig,
) -> Result<(UncertaintyReport, MetricBundle)> {
    let report = mc_predict(model, test, mc)?;
    let metrics = evaluate(&report, test.targets(), &eval.levels, eval.interval)?;
    Ok((report, metrics))
}

pub fn fit_and_evaluate(
    data: &SeriesBatch,
    train_idx: &[usize],
    val_idx: &[usize],
    test_idx: &[usize],
    settings: &RunSettings,
) -> Result<RunOutcome> {
    settings.validate()?;
    let method = settings.train.method;
    let mut model = build_model(&settings.model, data.features(), &method, settings.train.seed)?;
    let history = train(&mut model, &data.subset(train_idx), &data.subset(val_idx), &settings.train)?;
    let mc = settings.eval.mc_config(&method, settings.train.seed);
    let (report, metrics) = evaluate_model(&model, &data.subset(test_idx), &settings.eval, &mc)?;
    Ok(RunOutcome {
        model,
        history,
        report,
        metrics,
    })
}

/// One row of a ratio sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
    pub ece: f64,
    pub mean_pu: f64,
    pub norm_pu: f64,
}

impl SweepRow {
    pub fn new(ratio: f64, m: &MetricBundle) -> Self {
        Self {
            ratio,
            r2: m.r2,
            rmse: m.rmse,
            mae: m.mae,
            ece: m.ece,
            mean_pu: m.mean_pu,
            norm_pu: m.norm_pu,
        }
    }
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Train one fixed-ratio temporal-dropout model per ratio on the same split
/// and seed. Inference uses the training ratio unless `settings.eval.ratio`
/// pins one.
pub fn ratio_sweep(
    data: &SeriesBatch,
    split: &Holdout,
    ratios: &[f64],
    settings: &RunSettings,
) -> Result<Vec<(SweepRow, RunOutcome)>> {
    if ratios.is_empty() {
        return Err(Error::invalid("ratios", "need at least one ratio"));
    }
    ratios
        .iter()
        .map(|&ratio| {
            let mut s = settings.clone();
            s.train.method = Method::Td { ratio };
            if s.eval.source.is_none() {
                s.eval.source = Some(Source::TemporalHard);
            }
            let out = fit_and_evaluate(data, &split.train, &split.val, &split.test, &s)?;
            Ok((SweepRow::new(ratio, &out.metrics), out))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub history: TrainHistory,
    pub metrics: MetricBundle,
    pub learned_alpha: Option<f64>,
}

/// Scalar metrics aggregated across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
    pub ece: f64,
    pub mean_pu: f64,
    pub norm_pu: f64,
}

impl MetricStats {
    fn fields(m: &MetricBundle) -> [f64; 6] {
        [m.r2, m.rmse, m.mae, m.ece, m.mean_pu, m.norm_pu]
    }

    fn from_fields(v: [f64; 6]) -> Self {
        Self {
            r2: v[0],
            rmse: v[1],
            mae: v[2],
            ece: v[3],
            mean_pu: v[4],
            norm_pu: v[5],
        }
    }
}

/// Mean and sample standard deviation (zero for a single run) per metric.
pub fn aggregate(bundles: &[MetricBundle]) -> Result<(MetricStats, MetricStats)> {
    if bundles.is_empty() {
        return Err(Error::Data("nothing to aggregate".into()));
    }
    let n = bundles.len() as f64;
    let mut mean = [0.0; 6];
    for b in bundles {
        for (m, v) in mean.iter_mut().zip(MetricStats::fields(b)) {
            *m += v / n;
        }
    }
    let mut std = [0.0; 6];
    if bundles.len() > 1 {
        for b in bundles {
            for ((s, v), m) in std.iter_mut().zip(MetricStats::fields(b)).zip(mean) {
                *s += (v - m).powi(2) / (n - 1.0);
            }
        }
        std.iter_mut().for_each(|s| *s = s.sqrt());
    }
    Ok((MetricStats::from_fields(mean), MetricStats::from_fields(std)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFoldSummary {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldRecord>,
    pub mean: MetricStats,
    pub std: MetricStats,
}

impl KFoldSummary {
    pub fn learned_alphas(&self) -> Vec<Option<f64>> {
        self.folds.iter().map(|f| f.learned_alpha).collect()
    }
}

/// Train and score one model per fold. Each fold's training part gives up
/// [`DEFAULT_VAL_FRACTION`] of its examples for early stopping.
pub fn run_kfold(data: &SeriesBatch, k: usize, settings: &RunSettings) -> Result<KFoldSummary> {
    settings.validate()?;
    let seed = settings.train.seed;
    let plan = kfold(data.len(), k, seed)?;
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let (train_idx, val_idx) = carve_validation(&plan.train_indices(fold), DEFAULT_VAL_FRACTION, seed + fold as u64)?;
        let test_idx = plan.test_indices(fold);
        let out = fit_and_evaluate(data, &train_idx, &val_idx, test_idx, settings)?;
        folds.push(FoldRecord {
            fold,
            train_size: train_idx.len(),
            val_size: val_idx.len(),
            test_size: test_idx.len(),
            learned_alpha: out.history.learned_alpha,
            history: out.history,
            metrics: out.metrics,
        });
    }
    let bundles: Vec<MetricBundle> = folds.iter().map(|f| f.metrics.clone()).collect();
    let (mean, std) = aggregate(&bundles)?;
    Ok(KFoldSummary {
        k,
        seed,
        folds,
        mean,
        std,
    })
}

/// Persistent summary of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub settings: RunSettings,
    pub seed: u64,
    pub history: TrainHistory,
    pub metrics: MetricBundle,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn new(settings: &RunSettings, outcome: &RunOutcome, wall_clock_secs: f64) -> Self {
        Self {
            settings: settings.clone(),
            seed: settings.train.seed,
            history: outcome.history.clone(),
            metrics: outcome.metrics.clone(),
            wall_clock_secs,
        }
    }
}
