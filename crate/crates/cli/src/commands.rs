use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mctd_core::data::{generate, inject_missing, load_csv, write_csv, CsvSchema, GeneratorKind, MissingPattern, SeriesBatch, SyntheticSpec};
use mctd_core::metrics::{evaluate, MetricBundle, DEFAULT_LEVELS};
use mctd_core::nn::{checkpoint, LossKind};
use mctd_core::tempdrop::TemporalDropout;
use mctd_core::trainer::{fit_and_evaluate, ratio_sweep, run_kfold, write_sweep_csv, KFoldSummary, Method, RunRecord, SweepRow, TrainHistory, DEFAULT_FOLDS};
use mctd_core::uq::{mc_predict, IntervalMethod, McConfig, Source, UncertaintyReport, DEFAULT_NUM_SAMPLES};
use serde::Serialize;

use crate::config::{short_hash, CsvSource, ExperimentConfig};
use crate::run_dir::{RunDir, DEFAULT_ROOT, ROOT_ENV};

#[derive(Debug, Parser)]
#[command(name = "mctd", version, about = "Monte Carlo temporal dropout experiments for time-series regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its ground-truth sidecar.
    Gen(GenArgs),
    /// Train one model and score it on the held-out test split.
    Train(ExperimentArgs),
    /// Score a saved checkpoint on a CSV dataset.
    Eval(EvalArgs),
    /// Train one fixed-ratio temporal-dropout model per ratio on the same split.
    Sweep(SweepArgs),
    /// K-fold cross-validation with per-fold metrics and learned drop rates.
    Kfold(KfoldArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Write outputs into exactly this directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Root for auto-named run directories. Falls back to the config's
    /// `output_dir`, then `./runs`.
    #[arg(long, env = ROOT_ENV, value_name = "DIR")]
    pub output_root: Option<PathBuf>,
}

impl OutputArgs {
    fn resolve(&self, config_root: Option<&Path>, command: &str, hash: &str) -> anyhow::Result<RunDir> {
        if let Some(dir) = &self.out {
            return RunDir::at(dir);
        }
        let root = self
            .output_root
            .as_deref()
            .or(config_root)
            .unwrap_or(Path::new(DEFAULT_ROOT));
        RunDir::named(root, command, hash)
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// mean_signal, trend or seasonal_peak.
    #[arg(long, default_value = "mean_signal")]
    pub kind: GeneratorKind,
    /// Number of series.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Steps per series.
    #[arg(long = "t", default_value_t = 24)]
    pub steps: usize,
    /// Features per step.
    #[arg(long = "f", default_value_t = 3)]
    pub features: usize,
    /// Target noise level (ignored with --heteroscedastic).
    #[arg(long, default_value_t = 0.1)]
    pub noise_std: f64,
    /// Let the noise level depend on the input signal.
    #[arg(long)]
    pub heteroscedastic: bool,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Experiment description shared by `train`, `sweep` and `kfold`. Flags take
/// precedence over the config file, which takes precedence over defaults.
#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// TOML experiment config.
    #[arg(short, long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Long-format CSV dataset in the default schema; replaces the config's data source.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// none, td[:RATIO], ctd[:INIT_ALPHA[:TEMPERATURE]] or hidden_dropout.
    #[arg(long)]
    pub method: Option<Method>,
    /// nll or mse.
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Maximum training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Consecutive non-improving epochs tolerated before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Learning rate for the Concrete drop-rate logit.
    #[arg(long)]
    pub alpha_learning_rate: Option<f64>,
    /// Training seed. Also seeds Monte Carlo inference unless --mc-seed is given.
    #[arg(long)]
    pub seed: Option<u64>,
    /// LSTM units per layer.
    #[arg(long)]
    pub hidden_size: Option<usize>,
    /// Stacked LSTM layers.
    #[arg(long)]
    pub num_layers: Option<usize>,
    /// Width of the dense layer.
    #[arg(long)]
    pub dense_units: Option<usize>,
    /// Hidden-layer dropout probability.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Monte Carlo samples per prediction.
    #[arg(long)]
    pub samples: Option<usize>,
    /// temporal_hard, temporal_concrete or hidden_dropout.
    #[arg(long)]
    pub source: Option<Source>,
    /// Inference drop ratio for temporal_hard.
    #[arg(long)]
    pub mc_ratio: Option<f64>,
    /// Monte Carlo seed.
    #[arg(long)]
    pub mc_seed: Option<u64>,
    /// gaussian or mixture.
    #[arg(long)]
    pub interval: Option<IntervalMethod>,
    #[command(flatten)]
    pub output: OutputArgs,
}

impl ExperimentArgs {
    pub fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::read(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(path) = &self.data {
            cfg.data.csv = Some(CsvSource {
                path: path.clone(),
                schema: CsvSchema::default(),
            });
        }
        let (m, t, e) = (&mut cfg.model, &mut cfg.train, &mut cfg.eval);
        set(&mut t.method, self.method);
        set(&mut t.loss, self.loss);
        set(&mut t.epochs, self.epochs);
        set(&mut t.patience, self.patience);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.seed, self.seed);
        if self.alpha_learning_rate.is_some() {
            t.alpha_learning_rate = self.alpha_learning_rate;
        }
        set(&mut m.hidden_size, self.hidden_size);
        set(&mut m.num_layers, self.num_layers);
        set(&mut m.dense_units, self.dense_units);
        set(&mut m.dropout, self.dropout);
        set(&mut e.num_samples, self.samples);
        set(&mut e.interval, self.interval);
        if self.source.is_some() {
            e.source = self.source;
        }
        if self.mc_ratio.is_some() {
            e.ratio = self.mc_ratio;
        }
        if self.mc_seed.is_some() {
            e.seed = self.mc_seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn prepare(&self, command: &str) -> anyhow::Result<(ExperimentConfig, RunDir)> {
        let cfg = self.resolve()?;
        let dir = self
            .output
            .resolve(cfg.output_dir.as_deref(), command, &cfg.short_hash()?)?;
        dir.write_text("config.toml", &cfg.to_toml()?)?;
        Ok((cfg, dir))
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Debug, Args)]
pub struct SchemaArgs {
    /// Column holding the series identifier.
    #[arg(long, default_value = "series_id")]
    pub id_column: String,
    /// Column holding the integer time index.
    #[arg(long, default_value = "t")]
    pub time_column: String,
    /// Column holding the regression target.
    #[arg(long, default_value = "target")]
    pub target_column: String,
    /// Comma-separated feature columns; defaults to every other column.
    #[arg(long, value_delimiter = ',')]
    pub feature_columns: Option<Vec<String>>,
}

impl SchemaArgs {
    fn schema(&self) -> CsvSchema {
        CsvSchema {
            id_column: self.id_column.clone(),
            time_column: self.time_column.clone(),
            target_column: self.target_column.clone(),
            feature_columns: self.feature_columns.clone(),
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Long-format CSV dataset to score.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
    /// Monte Carlo samples per prediction (at least 2).
    #[arg(long, default_value_t = DEFAULT_NUM_SAMPLES)]
    pub samples: usize,
    /// temporal_hard, temporal_concrete or hidden_dropout. Defaults to
    /// temporal_concrete for Concrete models and temporal_hard otherwise.
    #[arg(long)]
    pub source: Option<Source>,
    /// Inference drop ratio for temporal_hard; defaults to the model's rate.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// gaussian or mixture.
    #[arg(long, default_value = "gaussian")]
    pub interval: IntervalMethod,
    /// Monte Carlo seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Knock out observed steps before scoring: random:R, burst:START:LEN or prefix:LEN.
    #[arg(long)]
    pub missing: Option<MissingPattern>,
    /// Seed for --missing random:R.
    #[arg(long, default_value_t = 0)]
    pub missing_seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Comma-separated training drop ratios.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])]
    pub ratios: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct KfoldArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Number of folds.
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub k: usize,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Kfold(a) => cmd_kfold(&a),
    }
}

fn cmd_gen(args: &GenArgs) -> anyhow::Result<()> {
    let spec = SyntheticSpec {
        kind: args.kind,
        n: args.n,
        steps: args.steps,
        features: args.features,
        noise_std: args.noise_std,
        heteroscedastic: args.heteroscedastic,
        seed: args.seed,
    };
    let ds = generate(&spec)?;
    let spec_json = serde_json::to_string_pretty(&spec)?;
    let dir = args
        .output
        .resolve(None, "gen", &short_hash(spec_json.as_bytes()))?;
    write_csv(&ds.batch, dir.file("data.csv"))?;
    let mut w = csv::Writer::from_path(dir.file("truth.csv"))?;
    w.write_record(["series_id", "true_mean", "true_var"])?;
    for ((id, m), v) in ds.batch.ids().iter().zip(&ds.true_mean).zip(&ds.true_var) {
        w.write_record([id.clone(), m.to_string(), v.to_string()])?;
    }
    w.flush()?;
    dir.write_text("spec.json", &(spec_json + "\n"))?;
    eprintln!("generated {} series of {} steps × {} features", spec.n, spec.steps, spec.features);
    println!("{}", dir.path().display());
    Ok(())
}

/// metrics.json, reliability.csv and uncertainty.csv for one scored batch.
fn write_scores(dir: &RunDir, metrics: &MetricBundle, report: &UncertaintyReport, batch: &SeriesBatch) -> anyhow::Result<()> {
    dir.write_json("metrics.json", metrics)?;
    metrics.reliability.write_csv(dir.file("reliability.csv"))?;
    report.write_csv(dir.file("uncertainty.csv"), batch.ids(), batch.targets())?;
    Ok(())
}

fn report_metrics(label: &str, m: &MetricBundle) {
    eprintln!(
        "{label}: n={} r2={:.4} rmse={:.4} mae={:.4} ece={:.2}% mean_pu={:.4} norm_pu={:.4}",
        m.n, m.r2, m.rmse, m.mae, m.ece, m.mean_pu, m.norm_pu
    );
}

fn cmd_train(args: &ExperimentArgs) -> anyhow::Result<()> {
    let (cfg, dir) = args.prepare("train")?;
    let data = cfg.data.load()?;
    let split = cfg.data.split(data.len())?;
    let settings = cfg.settings();
    let start = Instant::now();
    let out = fit_and_evaluate(&data, &split.train, &split.val, &split.test, &settings)?;
    let record = RunRecord::new(&settings, &out, start.elapsed().as_secs_f64());

    let test = data.subset(&split.test);
    checkpoint::save(&out.model, dir.file("checkpoint.json"))?;
    write_csv(&test, dir.file("test.csv"))?;
    write_scores(&dir, &out.metrics, &out.report, &test)?;
    dir.write_json("run_record.json", &record)?;

    let h = &out.history;
    eprintln!(
        "trained {} epochs (best {}, val loss {:.5}) in {:.1}s",
        h.epochs.len(),
        h.best_epoch,
        h.best_val_loss,
        record.wall_clock_secs
    );
    if let Some(a) = h.learned_alpha {
        eprintln!("learned drop rate {a:.4}");
    }
    report_metrics("test", &out.metrics);
    println!("{}", dir.path().display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalEcho<'a> {
    checkpoint: &'a Path,
    data: &'a Path,
    schema: CsvSchema,
    mc: McConfig,
    interval: IntervalMethod,
    levels: &'a [f64],
    missing: Option<MissingPattern>,
    missing_seed: u64,
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let model = checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let source = args.source.unwrap_or(match model.temporal() {
        TemporalDropout::Concrete { .. } => Source::TemporalConcrete,
        _ => Source::TemporalHard,
    });
    let echo = EvalEcho {
        checkpoint: &args.checkpoint,
        data: &args.data,
        schema: args.schema.schema(),
        mc: McConfig {
            num_samples: args.samples,
            source,
            seed: args.seed,
            ratio: args.ratio,
        },
        interval: args.interval,
        levels: &DEFAULT_LEVELS,
        missing: args.missing,
        missing_seed: args.missing_seed,
    };
    echo.mc.validate()?;
    let echo_json = serde_json::to_string_pretty(&echo)?;
    let dir = args
        .output
        .resolve(None, "eval", &short_hash(echo_json.as_bytes()))?;
    dir.write_text("eval.json", &(echo_json + "\n"))?;

    let mut data = load_csv(&args.data, &echo.schema)?;
    if let Some(pattern) = args.missing {
        data = inject_missing(&data, pattern, args.missing_seed)?;
    }
    let report = mc_predict(&model, &data, &echo.mc)?;
    let metrics = evaluate(&report, data.targets(), echo.levels, echo.interval)?;
    write_scores(&dir, &metrics, &report, &data)?;
    report.write_summary_json(dir.file("summary.json"))?;

    report_metrics("eval", &metrics);
    println!("{}", dir.path().display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepEntry {
    #[serde(flatten)]
    row: SweepRow,
    history: TrainHistory,
    metrics: MetricBundle,
}

fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let (cfg, dir) = args.experiment.prepare("sweep")?;
    let data = cfg.data.load()?;
    let split = cfg.data.split(data.len())?;
    let results = ratio_sweep(&data, &split, &args.ratios, &cfg.settings())?;
    let rows: Vec<SweepRow> = results.iter().map(|(row, _)| row.clone()).collect();
    write_sweep_csv(dir.file("sweep.csv"), &rows)?;
    let entries: Vec<SweepEntry> = results
        .into_iter()
        .map(|(row, out)| SweepEntry {
            row,
            history: out.history,
            metrics: out.metrics,
        })
        .collect();
    dir.write_json("sweep.json", &entries)?;
    for e in &entries {
        report_metrics(&format!("ratio {}", e.row.ratio), &e.metrics);
    }
    println!("{}", dir.path().display());
    Ok(())
}

fn write_kfold_csv(path: &Path, summary: &KFoldSummary) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fold", "r2", "rmse", "mae", "ece", "mean_pu", "norm_pu", "learned_alpha"])?;
    let alpha = |a: Option<f64>| a.map(|a| a.to_string()).unwrap_or_default();
    for f in &summary.folds {
        let m = &f.metrics;
        let cells = [m.r2, m.rmse, m.mae, m.ece, m.mean_pu, m.norm_pu].map(|v| v.to_string());
        w.write_field(f.fold.to_string())?;
        w.write_record(cells.iter().cloned().chain([alpha(f.learned_alpha)]))?;
    }
    let alphas: Option<Vec<f64>> = summary.learned_alphas().into_iter().collect();
    let mean_alpha = alphas.map(|a| a.iter().sum::<f64>() / a.len() as f64);
    let m = &summary.mean;
    let cells = [m.r2, m.rmse, m.mae, m.ece, m.mean_pu, m.norm_pu].map(|v| v.to_string());
    w.write_field("mean")?;
    w.write_record(cells.iter().cloned().chain([alpha(mean_alpha)]))?;
    w.flush()?;
    Ok(())
}

fn cmd_kfold(args: &KfoldArgs) -> anyhow::Result<()> {
    let (cfg, dir) = args.experiment.prepare("kfold")?;
    let data = cfg.data.load()?;
    let summary = run_kfold(&data, args.k, &cfg.settings())?;
    write_kfold_csv(&dir.file("kfold.csv"), &summary)?;
    dir.write_json("kfold.json", &summary)?;
    for f in &summary.folds {
        report_metrics(&format!("fold {}", f.fold), &f.metrics);
    }
    eprintln!(
        "mean r2={:.4}±{:.4} ece={:.2}±{:.2}%",
        summary.mean.r2, summary.std.r2, summary.mean.ece, summary.std.ece
    );
    println!("{}", dir.path().display());
    Ok(())
}
