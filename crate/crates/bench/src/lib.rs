//! Benchmark fixtures shared by the criterion suites.

use mctd_core::data::{generate, NormStats, SeriesBatch, SyntheticSpec};
use mctd_core::nn::{ModelConfig, SequenceRegressor};
use mctd_core::tempdrop::TemporalDropout;

pub fn series(n: usize, steps: usize, features: usize) -> SeriesBatch {
    let spec = SyntheticSpec {
        n,
        steps,
        features,
        seed: 1,
        ..Default::default()
    };
    generate(&spec).expect("valid spec").batch
}

/// A fitted-normalisation model ready for inference on `batch`.
pub fn model(hidden: usize, batch: &SeriesBatch, temporal: TemporalDropout) -> SequenceRegressor {
    let config = ModelConfig {
        hidden_size: hidden,
        dense_units: hidden,
        ..Default::default()
    };
    let mut m = SequenceRegressor::new(config, batch.features(), temporal, 0).expect("valid model");
    m.set_normalization(NormStats::fit(batch).expect("non-constant data"))
        .expect("matching features");
    m
}
