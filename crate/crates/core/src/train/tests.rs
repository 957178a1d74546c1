use rand::Rng;

use super::*;
use crate::lstm::InnerActivation;
use crate::model::ModelKind;
use crate::numerics::Vector;

fn toy(kind: ModelKind, act: InnerActivation) -> ModelSpec {
    ModelSpec {
        kind,
        locations: 2,
        vars: 3,
        n1: 8,
        n2: 4,
        activation: act,
        seq_len: 5,
        horizon: 1,
    }
}

/// Target is the first input of the last step, so the task is learnable.
fn windows(spec: &ModelSpec, n: usize, seed: u64) -> Vec<WindowBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let inputs: Vec<Vector> = (0..spec.seq_len)
                .map(|_| Vector::random_uniform(spec.input_dim(), 1.0, &mut rng))
                .collect();
            let target = 0.8 * inputs[spec.seq_len - 1][0] + 0.1 * rng.gen_range(-1.0..1.0);
            WindowBatch {
                inputs,
                target,
                window_id: i,
                target_date: Default::default(),
            }
        })
        .collect()
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        epochs: 5,
        batch_size: 8,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_worked_examples() {
    let spec = toy(ModelKind::Stacked, InnerActivation::Tanh);
    let zero = ModelParams::zeros(&spec);
    assert_eq!(loss(&[1.5], &[1.5], &zero, 0.0), 0.0);
    assert_eq!(loss(&[3.0], &[1.0], &zero, 0.0), 4.0);

    let mut one_weight = zero.clone();
    one_weight.w_dense[2] = 2.0;
    assert_eq!(loss(&[0.0], &[0.0], &one_weight, 1.0), 4.0);
    // biases are not penalized
    let mut bias = zero.clone();
    bias.b_dense = 5.0;
    bias.layer2.b_f[0] = 3.0;
    assert_eq!(loss(&[0.0], &[0.0], &bias, 1.0), 0.0);
}

#[test]
fn penalty_gradient_is_two_lambda_w() {
    let spec = toy(ModelKind::StStacked, InnerActivation::Sigmoid);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = ModelParams::random_full(&spec, 0.5, &mut rng);
    let ws = windows(&spec, 4, 1);
    let batch: Vec<&WindowBatch> = ws.iter().collect();
    let lambda = 0.3;
    let (l0, g0) = loss_and_grad(&spec, &params, &batch, 0.0).unwrap();
    let (l1, g1) = loss_and_grad(&spec, &params, &batch, lambda).unwrap();
    assert!((l1 - l0 - lambda * l2_norm_sq(&params)).abs() < 1e-12);
    let (g0, g1, w) = (g0.to_flat(), g1.to_flat(), params.to_flat());
    for (i, (label, penalized)) in params.flat_labels().into_iter().enumerate() {
        let expect = if penalized { 2.0 * lambda * w[i] } else { 0.0 };
        assert!((g1[i] - g0[i] - expect).abs() < 1e-12, "{label}");
    }
}

#[test]
fn batch_loss_matches_forward() {
    let spec = toy(ModelKind::Stacked, InnerActivation::Tanh);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = ModelParams::random_full(&spec, 0.5, &mut rng);
    let ws = windows(&spec, 3, 2);
    let batch: Vec<&WindowBatch> = ws.iter().collect();
    let (l, _) = loss_and_grad(&spec, &params, &batch, 0.01).unwrap();
    let pairs = evaluate(&spec, &params, &ws).unwrap();
    let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    assert!((l - loss(&p, &t, &params, 0.01)).abs() < 1e-14);
}

#[test]
fn zero_learning_rate_leaves_params_bit_exact() {
    let spec = toy(ModelKind::StStacked, InnerActivation::Tanh);
    let ws = windows(&spec, 20, 3);
    for optimizer in [Optimizer::Sgd, Optimizer::adam_default()] {
        let config = TrainConfig {
            learning_rate: 0.0,
            optimizer,
            ..quick_config()
        };
        let run = train_once(&spec, &config, &ws, 11).unwrap();
        assert_eq!(run.params, run.initial_params);
        let curve = &run.loss_curve;
        assert!(curve.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12), "{curve:?}");
    }
}

#[test]
fn same_seed_is_bit_identical() {
    let spec = toy(ModelKind::Stacked, InnerActivation::Sigmoid);
    let ws = windows(&spec, 30, 4);
    let a = train_once(&spec, &quick_config(), &ws, 7).unwrap();
    let b = train_once(&spec, &quick_config(), &ws, 7).unwrap();
    assert_eq!(a.loss_curve, b.loss_curve);
    assert_eq!(a.params, b.params);
    let c = train_once(&spec, &quick_config(), &ws, 8).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn training_reduces_loss() {
    let spec = toy(ModelKind::StStacked, InnerActivation::Tanh);
    let ws = windows(&spec, 64, 6);
    let config = TrainConfig {
        epochs: 30,
        ..quick_config()
    };
    let run = train_once(&spec, &config, &ws, 0).unwrap();
    assert_eq!(run.loss_curve.len(), 30);
    assert!(run.final_loss().unwrap() < 0.5 * run.first_loss().unwrap(), "{:?}", run.loss_curve);
}

#[test]
fn divergence_is_reported() {
    let spec = toy(ModelKind::Stacked, InnerActivation::Tanh);
    let ws: Vec<WindowBatch> = windows(&spec, 16, 9)
        .into_iter()
        .map(|mut w| {
            w.target *= 1e6;
            w
        })
        .collect();
    let config = TrainConfig {
        learning_rate: 1e6,
        optimizer: Optimizer::Sgd,
        epochs: 50,
        ..quick_config()
    };
    assert!(matches!(train_once(&spec, &config, &ws, 0), Err(Error::Diverged { .. })));
}

#[test]
fn repeats_use_consecutive_seeds_and_lower_median() {
    let spec = toy(ModelKind::Stacked, InnerActivation::Tanh);
    let train = windows(&spec, 24, 10);
    let test = windows(&spec, 10, 11);
    let config = TrainConfig {
        repeats: 4,
        seed: 100,
        ..quick_config()
    };
    let res = train_repeated(&spec, &config, &train, Some(&test), 2).unwrap();
    let seeds: Vec<u64> = res.runs.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![100, 101, 102, 103]);

    let mut maes: Vec<f64> = res.runs.iter().map(|r| r.test.unwrap().0).collect();
    let idx = res.median_run.unwrap();
    assert_eq!(res.median_mae, Some(maes[idx]));
    maes.sort_by(f64::total_cmp);
    assert_eq!(res.median_mae, Some(maes[1]));

    // threading does not change results
    let serial = train_repeated(&spec, &config, &train, Some(&test), 1).unwrap();
    for (a, b) in serial.runs.iter().zip(&res.runs) {
        assert_eq!(a.params, b.params);
    }
    let single = train_once(&spec, &config, &train, 102).unwrap();
    assert_eq!(single.params, res.runs[2].params);
}

#[test]
fn holdout_keeps_best_validation_epoch() {
    let spec = toy(ModelKind::Stacked, InnerActivation::Tanh);
    let ws = windows(&spec, 40, 12);
    let config = TrainConfig {
        holdout: true,
        epochs: 8,
        ..quick_config()
    };
    let run = train_once(&spec, &config, &ws, 3).unwrap();
    assert_eq!(run.val_curve.len(), 8);
    let best = run.val_curve.iter().copied().fold(f64::INFINITY, f64::min);
    let pairs = evaluate(&spec, &run.params, &ws[36..]).unwrap();
    let got = pairs.iter().map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pairs.len() as f64;
    assert!((got - best).abs() < 1e-12);

    assert!(train_once(&spec, &config, &ws[..5], 3).is_err());
}

#[test]
fn config_keys_round_trip() {
    let mut c = TrainConfig::default();
    let text = "# tuned\nlearning_rate = 0.005\nepochs=12\noptimizer = sgd\nholdout = yes\nbeta1 = 0.5\n";
    for (k, v) in parse_kv_text(text).unwrap() {
        assert!(c.set(&k, &v).unwrap(), "{k}");
    }
    assert_eq!(c.learning_rate, 0.005);
    assert_eq!(c.epochs, 12);
    assert_eq!(c.optimizer, Optimizer::Sgd);
    assert!(c.holdout);
    assert!(!c.set("n1", "4").unwrap());
    assert!(c.set("epochs", "many").is_err());
    assert!(parse_kv_text("just words").is_err());

    let d = TrainConfig::default();
    let mut back = TrainConfig {
        optimizer: Optimizer::Sgd,
        ..TrainConfig::default()
    };
    for (k, v) in d.to_kv() {
        back.set(&k, &v).unwrap();
    }
    assert_eq!(back, d);
    for (k, _) in d.to_kv() {
        assert!(TrainConfig::KEYS.contains(&k.as_str()));
    }
}

#[test]
fn invalid_configs_are_rejected() {
    for bad in [
        TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
        TrainConfig { l2_lambda: f64::NAN, ..TrainConfig::default() },
        TrainConfig { repeats: 0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig {
            optimizer: Optimizer::Adam { beta1: 1.0, beta2: 0.999, epsilon: 1e-8 },
            ..TrainConfig::default()
        },
    ] {
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))), "{bad:?}");
    }
}

#[test]
fn relative_error_formula() {
    assert_eq!(relative_error(1.0, 1.0), 0.0);
    assert_eq!(relative_error(2.0, 1.0), 0.5);
    // tiny values fall back to the 1e-8 floor
    assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
}

#[test]
fn gradcheck_passes_at_toy_sizes() {
    for kind in [ModelKind::Stacked, ModelKind::StStacked] {
        for act in [InnerActivation::Tanh, InnerActivation::Sigmoid] {
            let r = gradcheck(&toy(kind, act), 0, &GradcheckOptions::default()).unwrap();
            assert_eq!(r.n_params, crate::model::param_count(&toy(kind, act)).unwrap().total);
            assert!(r.max_rel_err < 1e-6, "{kind} {act}: {r:?}");
        }
    }
}

#[test]
fn gradcheck_catches_a_wrong_gradient() {
    // scaling one analytic component by 1.001 must be visible
    let spec = toy(ModelKind::Stacked, InnerActivation::Tanh);
    let opts = GradcheckOptions {
        lambda: 0.0,
        ..GradcheckOptions::default()
    };
    let clean = gradcheck(&spec, 1, &opts).unwrap();
    assert!(clean.max_rel_err < 1e-6);
    let broken = gradcheck::gradcheck_with(&spec, 1, &opts, |g| g[0] *= 1.001).unwrap();
    assert!(broken.max_rel_err > 1e-4, "{broken:?}");
}
