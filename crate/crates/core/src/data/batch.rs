use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A batch of multivariate time series with one scalar target each.
///
/// Inputs are stored `(batch, steps, features)` row-major. Steps at or beyond
/// an example's `length` are right padding; steps flagged invalid inside the
/// length are missing observations. Both are stored as zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesBatch {
    ids: Vec<String>,
    steps: usize,
    features: usize,
    inputs: Vec<f64>,
    validity: Vec<bool>,
    lengths: Vec<usize>,
    targets: Vec<f64>,
}

impl SeriesBatch {
    pub fn new(
        ids: Vec<String>,
        steps: usize,
        features: usize,
        inputs: Vec<f64>,
        validity: Vec<bool>,
        lengths: Vec<usize>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        let n = targets.len();
        if steps == 0 || features == 0 {
            return Err(Error::Data(format!(
                "series need at least one step and one feature (got T={steps}, F={features})"
            )));
        }
        if ids.len() != n || lengths.len() != n {
            return Err(Error::Data("ids/lengths/targets disagree in length".into()));
        }
        if inputs.len() != n * steps * features || validity.len() != n * steps {
            return Err(Error::Data(format!(
                "inputs/validity sizes do not match ({n}, {steps}, {features})"
            )));
        }
        if let Some(bad) = lengths.iter().position(|&l| l == 0 || l > steps) {
            return Err(Error::Data(format!(
                "series `{}` has invalid length {}",
                ids[bad], lengths[bad]
            )));
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite value in inputs or targets".into()));
        }
        let mut batch = Self {
            ids,
            steps,
            features,
            inputs,
            validity,
            lengths,
            targets,
        };
        batch.zero_invalid();
        Ok(batch)
    }

    /// Fixed-length batch with every step observed and generated ids.
    pub fn dense(steps: usize, features: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        let n = targets.len();
        Self::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            steps,
            features,
            inputs,
            vec![true; n * steps],
            vec![steps; n],
            targets,
        )
    }

    fn zero_invalid(&mut self) {
        let f = self.features;
        for (k, valid) in self.validity.iter_mut().enumerate() {
            let (b, t) = (k / self.steps, k % self.steps);
            if t >= self.lengths[b] {
                *valid = false;
            }
            if !*valid {
                self.inputs[k * f..(k + 1) * f].fill(0.0);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub(crate) fn inputs_mut(&mut self) -> &mut [f64] {
        &mut self.inputs
    }

    pub fn validity(&self) -> &[bool] {
        &self.validity
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub(crate) fn targets_mut(&mut self) -> &mut [f64] {
        &mut self.targets
    }

    pub fn is_valid(&self, example: usize, step: usize) -> bool {
        self.validity[example * self.steps + step]
    }

    /// Feature vector of one example at one step.
    pub fn step(&self, example: usize, step: usize) -> &[f64] {
        let base = (example * self.steps + step) * self.features;
        &self.inputs[base..base + self.features]
    }

    /// Values of every example at `step`, shaped `(batch, features)`.
    pub fn step_matrix(&self, step: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.features);
        for b in 0..self.len() {
            out.extend_from_slice(self.step(b, step));
        }
        out
    }

    /// Marks a step missing and zeroes its features.
    pub(crate) fn set_missing(&mut self, example: usize, step: usize) {
        let k = example * self.steps + step;
        self.validity[k] = false;
        self.inputs[k * self.features..(k + 1) * self.features].fill(0.0);
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let (t, f) = (self.steps, self.features);
        let mut inputs = Vec::with_capacity(indices.len() * t * f);
        let mut validity = Vec::with_capacity(indices.len() * t);
        for &i in indices {
            inputs.extend_from_slice(&self.inputs[i * t * f..(i + 1) * t * f]);
            validity.extend_from_slice(&self.validity[i * t..(i + 1) * t]);
        }
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            steps: t,
            features: f,
            inputs,
            validity,
            lengths: indices.iter().map(|&i| self.lengths[i]).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
        }
    }

    pub fn missing_fraction(&self) -> f64 {
        let total: usize = self.lengths.iter().sum();
        let missing = (0..self.len())
            .map(|b| (0..self.lengths[b]).filter(|&t| !self.is_valid(b, t)).count())
            .sum::<usize>();
        missing as f64 / total as f64
    }
}
