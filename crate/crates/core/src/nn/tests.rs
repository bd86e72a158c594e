use approx::assert_relative_eq;

use super::*;
use crate::autodiff::gradcheck::rel_error;
use crate::autodiff::{Graph, Tensor};
use crate::data::{generate, SeriesBatch, SyntheticSpec};
use crate::rng;
use crate::tempdrop::{sample_uniforms, DropoutMask, MaskKind, TemporalDropout};

fn tiny() -> ModelConfig {
    ModelConfig {
        hidden_size: 3,
        num_layers: 2,
        dense_units: 4,
        ..Default::default()
    }
}

fn batch(n: usize, steps: usize, features: usize, seed: u64) -> SeriesBatch {
    generate(&SyntheticSpec {
        n,
        steps,
        features,
        seed,
        ..Default::default()
    })
    .unwrap()
    .batch
}

fn loss_of(model: &SequenceRegressor, b: &SeriesBatch, opts: &ForwardOptions<'_>) -> f64 {
    let mut g = Graph::new();
    let out = model.forward(&mut g, b, opts, &mut rng::stream(0, 0)).unwrap();
    let y = g.constant(Tensor::from_parts(vec![b.len(), 1], b.targets().to_vec()));
    let l = nll_loss(&mut g, out.mu, out.var, y).unwrap();
    g.value(l).item()
}

/// Worst relative error between backprop and central differences over every
/// model parameter.
fn model_gradcheck(model: &SequenceRegressor, b: &SeriesBatch, opts: &ForwardOptions<'_>) -> f64 {
    let mut g = Graph::new();
    let out = model.forward(&mut g, b, opts, &mut rng::stream(0, 0)).unwrap();
    let y = g.constant(Tensor::from_parts(vec![b.len(), 1], b.targets().to_vec()));
    let l = nll_loss(&mut g, out.mu, out.var, y).unwrap();
    g.backward(l).unwrap();
    let grads: Vec<Tensor> = out.params.iter().map(|&p| g.grad(p)).collect();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for (i, grad) in grads.iter().enumerate() {
        for j in 0..grad.numel() {
            let orig = probe.params().get(i).data()[j];
            probe.params_mut().get_mut(i).data_mut()[j] = orig + h;
            let plus = loss_of(&probe, b, opts);
            probe.params_mut().get_mut(i).data_mut()[j] = orig - h;
            let minus = loss_of(&probe, b, opts);
            probe.params_mut().get_mut(i).data_mut()[j] = orig;
            worst = worst.max(rel_error(grad.data()[j], (plus - minus) / (2.0 * h)));
        }
    }
    worst
}

#[test]
fn parameter_layout() {
    let m = SequenceRegressor::new(tiny(), 2, TemporalDropout::Disabled, 0).unwrap();
    assert_eq!(m.params().by_name("encoder.l0.weight").unwrap().shape(), &[5, 12]);
    assert_eq!(m.params().by_name("encoder.l1.weight").unwrap().shape(), &[6, 12]);
    let bias = m.params().by_name("encoder.l0.bias").unwrap().data();
    assert_eq!(&bias[3..6], &[1.0, 1.0, 1.0]);
    assert_eq!(bias.iter().sum::<f64>(), 3.0);
    assert!(m.params().by_name(CONCRETE_LOGIT).is_none());
    assert_eq!(m.dropout_rate(), 0.0);

    let c = SequenceRegressor::new(
        tiny(),
        2,
        TemporalDropout::Concrete {
            init_alpha: 0.1,
            temperature: 0.1,
        },
        0,
    )
    .unwrap();
    assert_relative_eq!(c.learned_alpha().unwrap(), 0.1, epsilon = 1e-12);
}

#[test]
fn same_seed_same_weights() {
    let a = SequenceRegressor::new(tiny(), 2, TemporalDropout::Disabled, 5).unwrap();
    let b = SequenceRegressor::new(tiny(), 2, TemporalDropout::Hard { ratio: 0.3 }, 5).unwrap();
    assert_eq!(a.params(), b.params());
}

#[test]
fn outputs_have_expected_shape_and_positive_variance() {
    let m = SequenceRegressor::new(tiny(), 3, TemporalDropout::Disabled, 1).unwrap();
    let b = batch(7, 5, 3, 2);
    let mut g = Graph::new();
    let out = m.forward(&mut g, &b, &ForwardOptions::eval(), &mut rng::stream(0, 0)).unwrap();
    assert_eq!(g.shape(out.mu), &[7, 1]);
    assert_eq!(g.shape(out.encoding), &[7, 3]);
    assert!(g.value(out.var).data().iter().all(|&v| v > 0.0));
}

#[test]
fn train_mode_gradients_match_finite_differences() {
    let m = SequenceRegressor::new(tiny(), 2, TemporalDropout::Disabled, 3).unwrap();
    let b = batch(5, 4, 2, 4);
    let opts = ForwardOptions {
        mode: Mode::Train,
        hidden_dropout: false,
        temporal: TemporalInput::Off,
    };
    let worst = model_gradcheck(&m, &b, &opts);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn concrete_gradients_reach_the_rate() {
    let m = SequenceRegressor::new(
        tiny(),
        2,
        TemporalDropout::Concrete {
            init_alpha: 0.3,
            temperature: 0.5,
        },
        3,
    )
    .unwrap();
    let b = batch(4, 4, 2, 4);
    let u = sample_uniforms(16, &mut rng::stream(1, 9));
    let opts = ForwardOptions {
        mode: Mode::Train,
        hidden_dropout: false,
        temporal: TemporalInput::Concrete(&u),
    };
    let worst = model_gradcheck(&m, &b, &opts);
    assert!(worst < 1e-4, "worst relative error {worst}");

    let mut g = Graph::new();
    let out = m.forward(&mut g, &b, &opts, &mut rng::stream(0, 0)).unwrap();
    let y = g.constant(Tensor::from_parts(vec![4, 1], b.targets().to_vec()));
    let l = nll_loss(&mut g, out.mu, out.var, y).unwrap();
    g.backward(l).unwrap();
    let idx = m.concrete_index().unwrap();
    assert!(g.grad(out.params[idx]).item() != 0.0);
}

#[test]
fn fully_dropped_steps_equal_zeroed_inputs() {
    let m = SequenceRegressor::new(tiny(), 2, TemporalDropout::Hard { ratio: 0.5 }, 3).unwrap();
    let b = batch(3, 4, 2, 4);
    let mut values = vec![0.0; 12];
    values[1] = 1.0;
    values[6] = 1.0;
    let mask = DropoutMask::new(3, 4, values, MaskKind::Hard).unwrap();
    let opts = ForwardOptions {
        mode: Mode::Eval,
        hidden_dropout: false,
        temporal: TemporalInput::Mask(&mask),
    };
    let mut zeroed = b.clone();
    zeroed.set_missing(0, 1);
    zeroed.set_missing(1, 2);
    let masked = loss_of(&m, &b, &opts);
    let direct = loss_of(&m, &zeroed, &ForwardOptions::eval());
    assert_eq!(masked, direct);
}

#[test]
fn variable_lengths_read_the_last_valid_step() {
    let m = SequenceRegressor::new(tiny(), 1, TemporalDropout::Disabled, 0).unwrap();
    let long = SeriesBatch::dense(3, 1, vec![0.5, -0.2, 0.9], vec![1.0]).unwrap();
    let short = SeriesBatch::dense(2, 1, vec![0.5, -0.2], vec![1.0]).unwrap();
    let padded = SeriesBatch::new(
        vec!["a".into(), "b".into()],
        3,
        1,
        vec![0.5, -0.2, 0.0, 0.5, -0.2, 0.9],
        vec![true, true, false, true, true, true],
        vec![2, 3],
        vec![1.0, 1.0],
    )
    .unwrap();
    let run = |b: &SeriesBatch| {
        let mut g = Graph::new();
        let out = m.forward(&mut g, b, &ForwardOptions::eval(), &mut rng::stream(0, 0)).unwrap();
        g.value(out.mu).data().to_vec()
    };
    let both = run(&padded);
    assert_relative_eq!(both[0], run(&short)[0], epsilon = 1e-12);
    assert_relative_eq!(both[1], run(&long)[0], epsilon = 1e-12);
}

#[test]
fn hidden_dropout_is_stochastic_only_when_enabled() {
    let m = SequenceRegressor::new(tiny(), 2, TemporalDropout::Disabled, 0).unwrap();
    let b = batch(6, 4, 2, 1);
    let run = |dropout: bool, seed: u64| {
        let mut g = Graph::new();
        let opts = ForwardOptions {
            mode: Mode::Eval,
            hidden_dropout: dropout,
            temporal: TemporalInput::Off,
        };
        let out = m.forward(&mut g, &b, &opts, &mut rng::stream(seed, 0)).unwrap();
        g.value(out.mu).data().to_vec()
    };
    assert_eq!(run(false, 1), run(false, 2));
    assert_ne!(run(true, 1), run(true, 2));
}

#[test]
fn wrong_feature_count_is_rejected() {
    let m = SequenceRegressor::new(tiny(), 2, TemporalDropout::Disabled, 0).unwrap();
    let b = batch(2, 3, 3, 0);
    let mut g = Graph::new();
    let err = m.forward(&mut g, &b, &ForwardOptions::eval(), &mut rng::stream(0, 0)).unwrap_err();
    assert!(matches!(err, crate::Error::FeatureMismatch { expected: 2, actual: 3 }));
}

#[test]
fn checkpoint_round_trip_reproduces_predictions() {
    let mut m = SequenceRegressor::new(
        tiny(),
        2,
        TemporalDropout::Concrete {
            init_alpha: 0.2,
            temperature: 0.1,
        },
        8,
    )
    .unwrap();
    let b = batch(5, 4, 2, 9);
    m.set_normalization(crate::data::NormStats::fit(&b).unwrap()).unwrap();
    m.update_bn(&BatchStats {
        mean: vec![0.1, 0.2, 0.3],
        var: vec![1.5, 0.5, 2.0],
    });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    checkpoint::save(&m, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.predict(&b).unwrap(), m.predict(&b).unwrap());
    assert_eq!(back.learned_alpha(), m.learned_alpha());
}

#[test]
fn checkpoint_with_wrong_format_is_rejected() {
    let m = SequenceRegressor::new(tiny(), 2, TemporalDropout::Disabled, 0).unwrap();
    let text = checkpoint::to_json(&m).unwrap().replace("mctd-checkpoint", "other");
    assert!(matches!(checkpoint::from_json(&text), Err(crate::Error::Checkpoint(_))));
}
