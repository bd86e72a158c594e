use serde::{Deserialize, Serialize};

use super::SeriesBatch;
use crate::error::{Error, Result};

/// Per-feature and target z-score statistics, fitted on training data only.
///
/// Missing and padded steps are excluded from the statistics and stay at
/// zero after normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl NormStats {
    pub fn fit(batch: &SeriesBatch) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::Data("cannot fit normalisation on an empty batch".into()));
        }
        let f = batch.features();
        let mut sum = vec![0.0; f];
        let mut sq = vec![0.0; f];
        let mut count = 0usize;
        for b in 0..batch.len() {
            for t in 0..batch.steps() {
                if !batch.is_valid(b, t) {
                    continue;
                }
                count += 1;
                for (j, &x) in batch.step(b, t).iter().enumerate() {
                    sum[j] += x;
                    sq[j] += x * x;
                }
            }
        }
        let (feature_mean, feature_std) = if count == 0 {
            (vec![0.0; f], vec![1.0; f])
        } else {
            let c = count as f64;
            let means: Vec<f64> = sum.iter().map(|s| s / c).collect();
            let stds = sq
                .iter()
                .zip(&means)
                .map(|(q, m)| guard_std((q / c - m * m).max(0.0).sqrt()))
                .collect();
            (means, stds)
        };
        let (target_mean, target_std) = mean_std(batch.targets());
        Ok(Self {
            feature_mean,
            feature_std,
            target_mean,
            target_std: guard_std(target_std),
        })
    }

    pub fn features(&self) -> usize {
        self.feature_mean.len()
    }

    /// Normalise inputs only; targets are passed through untouched.
    pub fn normalize_inputs(&self, batch: &SeriesBatch) -> Result<SeriesBatch> {
        if batch.features() != self.features() {
            return Err(Error::FeatureMismatch {
                expected: self.features(),
                actual: batch.features(),
            });
        }
        let mut out = batch.clone();
        let (steps, f) = (batch.steps(), batch.features());
        let validity = batch.validity().to_vec();
        for (k, row) in out.inputs_mut().chunks_mut(f).enumerate() {
            if !validity[k] {
                continue;
            }
            debug_assert!(k / steps < batch.len());
            for (j, x) in row.iter_mut().enumerate() {
                *x = (*x - self.feature_mean[j]) / self.feature_std[j];
            }
        }
        Ok(out)
    }

    /// Normalise inputs and targets.
    pub fn normalize(&self, batch: &SeriesBatch) -> Result<SeriesBatch> {
        let mut out = self.normalize_inputs(batch)?;
        for y in out.targets_mut() {
            *y = (*y - self.target_mean) / self.target_std;
        }
        Ok(out)
    }

    pub fn denormalize_mean(&self, mu: f64) -> f64 {
        mu * self.target_std + self.target_mean
    }

    pub fn denormalize_var(&self, var: f64) -> f64 {
        var * self.target_std * self.target_std
    }
}

fn guard_std(s: f64) -> f64 {
    if s > 1e-12 {
        s
    } else {
        1.0
    }
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
