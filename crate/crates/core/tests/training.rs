use cxa_core::gradcheck_suite::synthetic_samples;
use cxa_core::train::{mean_loss, train};
use cxa_core::{CoreError, Model, ModalitySet, ModelConfig, ModelKind, TrainConfig};

fn quick(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        learning_rate: lr,
        seed: 3,
        clip_norm: None,
        track_best: false,
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let samples = synthetic_samples(8, 3, 7, 1);
    for kind in [ModelKind::Cxa, ModelKind::TripleLstm] {
        let mut model = Model::new(ModelConfig::tiny(kind, "y+b+s".parse().unwrap()), 2).unwrap();
        let before = model.params.clone();
        let out = train(&mut model, &samples, &quick(3, 0.0), None).unwrap();
        assert_eq!(model.params, before);
        let bits: Vec<u64> = model.params.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect();
        let orig: Vec<u64> = before.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect();
        assert_eq!(bits, orig);
        // each epoch sees the same parameters, so its mean loss is the same
        let e = &out.history.epoch_losses;
        assert!(e.iter().all(|v| (v - e[0]).abs() <= 1e-12 * e[0]));
    }
}

#[test]
fn same_seed_same_history() {
    let samples = synthetic_samples(12, 3, 7, 4);
    let run = |seed: u64| {
        let mut model = Model::new(ModelConfig::tiny(ModelKind::LipLstm, "y+c+d".parse().unwrap()), 5).unwrap();
        let mut cfg = quick(3, 1e-2);
        cfg.seed = seed;
        let out = train(&mut model, &samples, &cfg, None).unwrap();
        (out.history, model.params)
    };
    let (a, pa) = run(1);
    let (b, pb) = run(1);
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    let (c, _) = run(2);
    assert_ne!(a.step_losses, c.step_losses);
}

#[test]
fn training_reduces_loss() {
    let samples = synthetic_samples(16, 3, 7, 6);
    let mut model = Model::new(ModelConfig::tiny(ModelKind::Cxa, ModalitySet::EGO_ONLY), 7).unwrap();
    let before = mean_loss(&model, &samples, 16).unwrap();
    train(&mut model, &samples, &quick(20, 1e-2), None).unwrap();
    assert!(mean_loss(&model, &samples, 16).unwrap() < 0.5 * before);
}

#[test]
fn non_finite_loss_names_the_batch() {
    let mut samples = synthetic_samples(8, 3, 7, 8);
    samples[5].ego_future[3] = f64::NAN;
    let mut model = Model::new(ModelConfig::tiny(ModelKind::Cxa, ModalitySet::EGO_ONLY), 9).unwrap();
    let mut cfg = quick(2, 1e-3);
    cfg.batch_size = 1;
    match train(&mut model, &samples, &cfg, None) {
        Err(CoreError::NonFiniteLoss { epoch: 0, batch }) => assert!(batch < 8),
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

#[test]
fn best_epoch_is_tracked_against_validation() {
    let samples = synthetic_samples(8, 3, 7, 10);
    let val = synthetic_samples(4, 3, 7, 11);
    let mut model = Model::new(ModelConfig::tiny(ModelKind::Cxa, ModalitySet::EGO_ONLY), 12).unwrap();
    let mut cfg = quick(5, 1e-2);
    cfg.track_best = true;
    let out = train(&mut model, &samples, &cfg, Some(&val)).unwrap();
    let v = &out.history.validation_losses;
    assert_eq!(v.len(), 5);
    let (epoch, params) = out.best.unwrap();
    let lowest = v.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(v[epoch - 1], lowest);
    assert_eq!(params.len(), model.params.len());
}

#[test]
fn invalid_training_configs_are_rejected() {
    let samples = synthetic_samples(4, 3, 7, 13);
    let mut model = Model::new(ModelConfig::tiny(ModelKind::Cxa, ModalitySet::EGO_ONLY), 14).unwrap();
    let mut cfg = quick(1, 1e-3);
    cfg.batch_size = 5;
    assert!(train(&mut model, &samples, &cfg, None).is_err());
    cfg.batch_size = 2;
    cfg.epochs = 0;
    assert!(train(&mut model, &samples, &cfg, None).is_err());
}
