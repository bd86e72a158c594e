//! Recurrent sequence regressor with a heteroscedastic Gaussian output.
//!
//! Early-fused series → stacked LSTM → batch norm on the last valid hidden
//! state → dense layer → two linear heads `μ(x)` and `s(x) = log σ²(x)`.
//! Standard dropout sits between recurrent layers and after the dense layer.
//! Temporal dropout, when configured, perturbs the input series before the
//! encoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::autodiff::{Graph, Tensor, Var};
use crate::data::{NormStats, SeriesBatch};
use crate::error::{Error, Result};
use crate::rng;
use crate::tempdrop::{apply_mask, soft_mask_on_graph, ConcreteParam, DropoutMask, TemporalDropout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub num_layers: usize,
    pub dense_units: usize,
    /// Standard dropout rate between recurrent layers and after the dense layer.
    pub dropout: f64,
    pub dense_activation: Activation,
    pub batch_norm_momentum: f64,
    pub batch_norm_eps: f64,
    /// Bounds on the log-variance head.
    pub log_var_min: f64,
    pub log_var_max: f64,
    /// Rows per forward pass when predicting on large batches.
    pub eval_chunk: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 128,
            num_layers: 2,
            dense_units: 128,
            dropout: 0.2,
            dense_activation: Activation::Tanh,
            batch_norm_momentum: 0.1,
            batch_norm_eps: 1e-5,
            log_var_min: -10.0,
            log_var_max: 10.0,
            eval_chunk: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.dense_units == 0 {
            return Err(Error::invalid("hidden_size", "layer widths must be positive"));
        }
        if self.num_layers == 0 {
            return Err(Error::invalid("num_layers", "need at least one recurrent layer"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout", format!("{} is outside [0, 1)", self.dropout)));
        }
        if !(0.0..=1.0).contains(&self.batch_norm_momentum) || !(self.batch_norm_eps > 0.0) {
            return Err(Error::invalid("batch_norm_momentum", "momentum in [0, 1] and eps > 0"));
        }
        if !(self.log_var_min < self.log_var_max) {
            return Err(Error::invalid("log_var_min", "must be below log_var_max"));
        }
        if self.eval_chunk == 0 {
            return Err(Error::invalid("eval_chunk", "must be positive"));
        }
        Ok(())
    }
}

/// Batch-norm statistics source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalise with batch statistics and report them for the running update.
    Train,
    /// Normalise with frozen running statistics.
    Eval,
}

/// Temporal perturbation applied to the (normalised) inputs.
#[derive(Debug, Clone, Copy, Default)]
pub enum TemporalInput<'a> {
    #[default]
    Off,
    /// Fixed drop mask (hard or pre-computed soft), applied as a constant.
    Mask(&'a DropoutMask),
    /// Concrete mask from the model's learnable rate and these uniforms
    /// (row-major `(batch, steps)`); differentiable in the rate.
    Concrete(&'a [f64]),
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions<'a> {
    pub mode: Mode,
    /// Sample standard dropout masks.
    pub hidden_dropout: bool,
    pub temporal: TemporalInput<'a>,
}

impl ForwardOptions<'_> {
    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            hidden_dropout: false,
            temporal: TemporalInput::Off,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

/// Handles into the graph built by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `(batch, 1)`
    pub mu: Var,
    /// `(batch, 1)`, strictly positive.
    pub var: Var,
    pub log_var: Var,
    /// Encoder output after batch norm, `(batch, hidden)`.
    pub encoding: Var,
    /// One leaf per model parameter, in [`ParamSet`] order.
    pub params: Vec<Var>,
    pub batch_stats: Option<BatchStats>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    lstm: Vec<(usize, usize)>,
    bn_gamma: usize,
    bn_beta: usize,
    dense: (usize, usize),
    mu: (usize, usize),
    log_var: (usize, usize),
    concrete: Option<usize>,
}

pub const CONCRETE_LOGIT: &str = "concrete.logit";

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRegressor {
    config: ModelConfig,
    input_features: usize,
    temporal: TemporalDropout,
    params: ParamSet,
    layout: Layout,
    bn_running_mean: Vec<f64>,
    bn_running_var: Vec<f64>,
    normalization: Option<NormStats>,
}

impl SequenceRegressor {
    pub fn new(config: ModelConfig, input_features: usize, temporal: TemporalDropout, seed: u64) -> Result<Self> {
        config.validate()?;
        temporal.validate()?;
        if input_features == 0 {
            return Err(Error::invalid("input_features", "must be positive"));
        }
        let mut rng = rng::stream(seed, rng::tags::INIT);
        let (h, d) = (config.hidden_size, config.dense_units);
        let mut params = ParamSet::new();
        let uniform = |rows: usize, cols: usize, rng: &mut rng::Rng| {
            let k = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-k..=k)).collect();
            Tensor::from_parts(vec![rows, cols], data)
        };

        let mut lstm = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let fan_in = if l == 0 { input_features } else { h } + h;
            let w = params.push(format!("encoder.l{l}.weight"), uniform(fan_in, 4 * h, &mut rng));
            // gate order i, f, g, o; forget gate starts open
            let mut bias = vec![0.0; 4 * h];
            bias[h..2 * h].fill(1.0);
            let b = params.push(format!("encoder.l{l}.bias"), Tensor::from_parts(vec![1, 4 * h], bias));
            lstm.push((w, b));
        }
        let bn_gamma = params.push("bn.gamma", Tensor::filled(&[1, h], 1.0));
        let bn_beta = params.push("bn.beta", Tensor::zeros(&[1, h]));
        let dense = (
            params.push("dense.weight", uniform(h, d, &mut rng)),
            params.push("dense.bias", Tensor::zeros(&[1, d])),
        );
        let mu = (
            params.push("mu.weight", uniform(d, 1, &mut rng)),
            params.push("mu.bias", Tensor::zeros(&[1, 1])),
        );
        let log_var = (
            params.push("log_var.weight", uniform(d, 1, &mut rng)),
            params.push("log_var.bias", Tensor::zeros(&[1, 1])),
        );
        let concrete = match temporal {
            TemporalDropout::Concrete {
                init_alpha,
                temperature,
            } => {
                let p = ConcreteParam::from_alpha(init_alpha, temperature)?;
                Some(params.push(CONCRETE_LOGIT, Tensor::scalar(p.logit)))
            }
            _ => None,
        };

        Ok(Self {
            input_features,
            temporal,
            params,
            layout: Layout {
                lstm,
                bn_gamma,
                bn_beta,
                dense,
                mu,
                log_var,
                concrete,
            },
            bn_running_mean: vec![0.0; h],
            bn_running_var: vec![1.0; h],
            normalization: None,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_features(&self) -> usize {
        self.input_features
    }

    pub fn temporal(&self) -> TemporalDropout {
        self.temporal
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn normalization(&self) -> Option<&NormStats> {
        self.normalization.as_ref()
    }

    pub fn set_normalization(&mut self, stats: NormStats) -> Result<()> {
        if stats.features() != self.input_features {
            return Err(Error::FeatureMismatch {
                expected: self.input_features,
                actual: stats.features(),
            });
        }
        self.normalization = Some(stats);
        Ok(())
    }

    pub fn bn_running_stats(&self) -> (&[f64], &[f64]) {
        (&self.bn_running_mean, &self.bn_running_var)
    }

    pub(crate) fn set_bn_running_stats(&mut self, mean: Vec<f64>, var: Vec<f64>) -> Result<()> {
        let h = self.config.hidden_size;
        if mean.len() != h || var.len() != h {
            return Err(Error::Checkpoint("batch-norm statistics have the wrong width".into()));
        }
        self.bn_running_mean = mean;
        self.bn_running_var = var;
        Ok(())
    }

    /// Blend batch statistics into the running estimates.
    pub fn update_bn(&mut self, stats: &BatchStats) {
        let m = self.config.batch_norm_momentum;
        for (r, b) in self.bn_running_mean.iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.bn_running_var.iter_mut().zip(&stats.var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }

    /// Index of the Concrete rate logit in [`Self::params`], if learnable.
    pub fn concrete_index(&self) -> Option<usize> {
        self.layout.concrete
    }

    pub fn concrete_param(&self) -> Option<ConcreteParam> {
        match (self.temporal, self.layout.concrete) {
            (TemporalDropout::Concrete { temperature, .. }, Some(i)) => Some(ConcreteParam {
                logit: self.params.get(i).item(),
                temperature,
            }),
            _ => None,
        }
    }

    /// Current drop rate: the learned Concrete α, the fixed hard ratio, or 0.
    pub fn dropout_rate(&self) -> f64 {
        match self.temporal {
            TemporalDropout::Disabled => 0.0,
            TemporalDropout::Hard { ratio } => ratio,
            TemporalDropout::Concrete { .. } => self.concrete_param().map_or(0.0, |p| p.alpha()),
        }
    }

    pub fn learned_alpha(&self) -> Option<f64> {
        self.concrete_param().map(|p| p.alpha())
    }

    /// Build the computation graph for an already normalised batch.
    pub fn forward(
        &self,
        g: &mut Graph,
        batch: &SeriesBatch,
        opts: &ForwardOptions<'_>,
        rng: &mut impl Rng,
    ) -> Result<Forward> {
        if batch.features() != self.input_features {
            return Err(Error::FeatureMismatch {
                expected: self.input_features,
                actual: batch.features(),
            });
        }
        if batch.is_empty() {
            return Err(Error::Data("cannot run the encoder on an empty batch".into()));
        }
        let (n, steps, f) = (batch.len(), batch.steps(), batch.features());
        let h = self.config.hidden_size;
        let drop_rate = if opts.hidden_dropout { self.config.dropout } else { 0.0 };
        let pv: Vec<Var> = self.params.tensors().map(|t| g.param(t.clone())).collect();

        // inputs, one (n, f) node per step
        let masked;
        let source = match opts.temporal {
            TemporalInput::Mask(mask) => {
                masked = apply_mask(batch, mask)?;
                &masked
            }
            _ => batch,
        };
        let mut inputs: Vec<Var> = (0..steps)
            .map(|t| g.constant(Tensor::from_parts(vec![n, f], source.step_matrix(t))))
            .collect();
        if let TemporalInput::Concrete(uniforms) = opts.temporal {
            let (idx, temperature) = match (self.layout.concrete, self.temporal) {
                (Some(i), TemporalDropout::Concrete { temperature, .. }) => (i, temperature),
                _ => {
                    return Err(Error::invalid(
                        "source",
                        "Concrete masking needs a model trained with a learnable rate",
                    ))
                }
            };
            if uniforms.len() != n * steps {
                return Err(Error::ShapeMismatch {
                    op: "concrete_mask",
                    lhs: vec![n, steps],
                    rhs: vec![uniforms.len()],
                });
            }
            let p = soft_mask_on_graph(g, pv[idx], temperature, uniforms, n, steps)?;
            let keep = g.rsub(1.0, p);
            for (t, x) in inputs.iter_mut().enumerate() {
                let k = g.slice(keep, 1, t, t + 1)?;
                *x = g.mul(*x, k)?;
            }
        }

        // stacked LSTM
        let zeros = Tensor::zeros(&[n, h]);
        for (l, &(w, b)) in self.layout.lstm.iter().enumerate() {
            let mut hs = g.constant(zeros.clone());
            let mut cs = g.constant(zeros.clone());
            let mut outputs = Vec::with_capacity(steps);
            for x in &inputs {
                let z = g.concat(&[*x, hs], 1)?;
                let z = g.matmul(z, pv[w])?;
                let z = g.add(z, pv[b])?;
                let i = g.slice(z, 1, 0, h)?;
                let i = g.sigmoid(i);
                let fg = g.slice(z, 1, h, 2 * h)?;
                let fg = g.sigmoid(fg);
                let cand = g.slice(z, 1, 2 * h, 3 * h)?;
                let cand = g.tanh(cand);
                let o = g.slice(z, 1, 3 * h, 4 * h)?;
                let o = g.sigmoid(o);
                let keep = g.mul(fg, cs)?;
                let write = g.mul(i, cand)?;
                cs = g.add(keep, write)?;
                let act = g.tanh(cs);
                hs = g.mul(o, act)?;
                outputs.push(hs);
            }
            check_finite(g, hs, || format!("encoder.l{l}"))?;
            let last_layer = l + 1 == self.layout.lstm.len();
            inputs = if !last_layer && drop_rate > 0.0 {
                outputs
                    .into_iter()
                    .map(|o| dropout(g, o, drop_rate, rng))
                    .collect::<Result<_>>()?
            } else {
                outputs
            };
        }

        // last valid step of each series
        let lengths = batch.lengths();
        let last = if lengths.iter().all(|&len| len == steps) {
            inputs[steps - 1]
        } else {
            let mut acc: Option<Var> = None;
            for t in 0..steps {
                if !lengths.iter().any(|&len| len == t + 1) {
                    continue;
                }
                let sel: Vec<f64> = lengths.iter().map(|&len| f64::from(len == t + 1)).collect();
                let sel = g.constant(Tensor::from_parts(vec![n, 1], sel));
                let picked = g.mul(inputs[t], sel)?;
                acc = Some(match acc {
                    Some(a) => g.add(a, picked)?,
                    None => picked,
                });
            }
            acc.expect("every series has a last step")
        };

        // batch norm
        let eps = self.config.batch_norm_eps;
        let (normed, batch_stats) = match opts.mode {
            Mode::Train => {
                let mean = g.mean_axis(last, 0)?;
                let centred = g.sub(last, mean)?;
                let sq = g.square(centred);
                let var = g.mean_axis(sq, 0)?;
                let shifted = g.offset(var, eps);
                let std = g.sqrt(shifted);
                let normed = g.div(centred, std)?;
                let bessel = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
                let stats = BatchStats {
                    mean: g.value(mean).data().to_vec(),
                    var: g.value(var).data().iter().map(|v| v * bessel).collect(),
                };
                (normed, Some(stats))
            }
            Mode::Eval => {
                let mean = g.constant(Tensor::from_parts(vec![1, h], self.bn_running_mean.clone()));
                let std: Vec<f64> = self.bn_running_var.iter().map(|v| (v + eps).sqrt()).collect();
                let std = g.constant(Tensor::from_parts(vec![1, h], std));
                let centred = g.sub(last, mean)?;
                (g.div(centred, std)?, None)
            }
        };
        let scaled = g.mul(normed, pv[self.layout.bn_gamma])?;
        let encoding = g.add(scaled, pv[self.layout.bn_beta])?;
        check_finite(g, encoding, || "batch_norm".into())?;

        // dense + heads
        let (dw, db) = self.layout.dense;
        let hidden = g.matmul(encoding, pv[dw])?;
        let hidden = g.add(hidden, pv[db])?;
        let mut hidden = match self.config.dense_activation {
            Activation::Tanh => g.tanh(hidden),
            Activation::Relu => g.relu(hidden),
            Activation::Identity => hidden,
        };
        check_finite(g, hidden, || "dense".into())?;
        if drop_rate > 0.0 {
            hidden = dropout(g, hidden, drop_rate, rng)?;
        }

        let (mw, mb) = self.layout.mu;
        let mu = g.matmul(hidden, pv[mw])?;
        let mu = g.add(mu, pv[mb])?;
        check_finite(g, mu, || "mu_head".into())?;
        let (vw, vb) = self.layout.log_var;
        let s = g.matmul(hidden, pv[vw])?;
        let s = g.add(s, pv[vb])?;
        check_finite(g, s, || "log_var_head".into())?;
        let log_var = g.clamp(s, self.config.log_var_min, self.config.log_var_max);
        let var = g.exp(log_var);

        Ok(Forward {
            mu,
            var,
            log_var,
            encoding,
            params: pv,
            batch_stats,
        })
    }

    /// Encoder output after batch norm for a normalised batch.
    pub fn encode(&self, batch: &SeriesBatch, mode: Mode) -> Result<Tensor> {
        let mut g = Graph::new();
        let opts = ForwardOptions {
            mode,
            hidden_dropout: mode == Mode::Train,
            temporal: TemporalInput::Off,
        };
        let out = self.forward(&mut g, batch, &opts, &mut rng::stream(0, 0))?;
        Ok(g.value(out.encoding).clone())
    }

    fn normalize_inputs(&self, batch: &SeriesBatch) -> Result<SeriesBatch> {
        match &self.normalization {
            Some(stats) => stats.normalize_inputs(batch),
            None => Ok(batch.clone()),
        }
    }

    fn denormalize(&self, mu: &mut [f64], var: &mut [f64]) {
        if let Some(stats) = &self.normalization {
            mu.iter_mut().for_each(|m| *m = stats.denormalize_mean(*m));
            var.iter_mut().for_each(|v| *v = stats.denormalize_var(*v));
        }
    }

    /// Run a raw (unnormalised) batch in chunks and return `(μ, σ²)` in
    /// target units. `opts_for` builds the options for each chunk.
    pub(crate) fn run_chunks<R: Rng>(
        &self,
        batch: &SeriesBatch,
        rng: &mut R,
        mut opts_for: impl FnMut(&SeriesBatch, &mut R) -> Result<ChunkPlan>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let normed = self.normalize_inputs(batch)?;
        let mut mu = Vec::with_capacity(batch.len());
        let mut var = Vec::with_capacity(batch.len());
        let idx: Vec<usize> = (0..batch.len()).collect();
        for rows in idx.chunks(self.config.eval_chunk) {
            let chunk = if rows.len() == batch.len() {
                normed.clone()
            } else {
                normed.subset(rows)
            };
            let plan = opts_for(&chunk, rng)?;
            let temporal = match &plan {
                ChunkPlan::Off | ChunkPlan::HiddenDropout => TemporalInput::Off,
                ChunkPlan::Mask(m) => TemporalInput::Mask(m),
            };
            let opts = ForwardOptions {
                mode: Mode::Eval,
                hidden_dropout: matches!(plan, ChunkPlan::HiddenDropout),
                temporal,
            };
            let mut g = Graph::new();
            let out = self.forward(&mut g, &chunk, &opts, rng)?;
            mu.extend_from_slice(g.value(out.mu).data());
            var.extend_from_slice(g.value(out.var).data());
        }
        self.denormalize(&mut mu, &mut var);
        Ok((mu, var))
    }

    /// Deterministic eval-mode prediction in target units.
    pub fn predict(&self, batch: &SeriesBatch) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut rng = rng::stream(0, 0);
        self.run_chunks(batch, &mut rng, |_, _| Ok(ChunkPlan::Off))
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        input_features: usize,
        temporal: TemporalDropout,
        params: ParamSet,
    ) -> Result<Self> {
        let mut model = Self::new(config, input_features, temporal, 0)?;
        if model.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (i, (name, t)) in params.iter().enumerate() {
            if name != model.params.name(i) || t.shape() != model.params.get(i).shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {i} is `{name}` {:?}, expected `{}` {:?}",
                    t.shape(),
                    model.params.name(i),
                    model.params.get(i).shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }
}

/// Per-chunk stochasticity chosen by the caller of `run_chunks`.
pub(crate) enum ChunkPlan {
    Off,
    HiddenDropout,
    Mask(DropoutMask),
}

fn dropout(g: &mut Graph, x: Var, rate: f64, rng: &mut impl Rng) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let scale = 1.0 / (1.0 - rate);
    let n: usize = shape.iter().product();
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
        .collect();
    let mask = g.constant(Tensor::from_parts(shape, mask));
    g.mul(x, mask)
}

fn check_finite(g: &Graph, v: Var, layer: impl FnOnce() -> String) -> Result<()> {
    if g.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { layer: layer() })
    }
}
