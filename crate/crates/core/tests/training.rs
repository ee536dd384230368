use eopt::data::{synth_generate, SynthConfig};
use eopt::dates::Day;
use eopt::model::{build_model, read_checkpoint, ModelConfig};
use eopt::training::{
    chinchilla_params, chinchilla_tokens, train, Batch, LossLog, LrSchedule, LrShape, TrainConfig, Trainer,
};
use eopt::Error;
use proptest::prelude::*;

fn small_data(n_pixels: usize, seed: u64) -> eopt::data::TokenizedDataset {
    synth_generate(&SynthConfig {
        n_pixels,
        end: Day::from_ymd(2017, 1, 1).unwrap(),
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
    .dataset
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        total_steps: 30,
        tokens_per_step: 128,
        window: Some(16),
        log_every: 5,
        val_every: 10,
        val_windows: 8,
        val_fraction: 0.1,
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn overfit_single_batch() {
    let data = small_data(8, 1);
    let windows: Vec<(usize, usize)> = (0..8).map(|p| (p, 3 * p)).collect();
    let batch = Batch::assemble(&data, &windows, 16).unwrap();
    let params = build_model(&ModelConfig::preset("toy").unwrap(), 0).unwrap();
    let cfg = TrainConfig {
        total_steps: 2000,
        max_lr: 1e-3,
        ..TrainConfig::default()
    };
    let schedule = cfg.schedule();
    let mut trainer = Trainer::new(params, &cfg);
    let pred = trainer.params().forward_batch(&batch.tokens, 16).unwrap();
    let initial = eopt::numerics::ops::huber_loss(&pred, &batch.targets, 1.0).unwrap();
    for step in 0..cfg.total_steps {
        trainer.step(&batch, schedule.at(step)).unwrap();
    }
    let pred = trainer.params().forward_batch(&batch.tokens, 16).unwrap();
    let last = eopt::numerics::ops::huber_loss(&pred, &batch.targets, 1.0).unwrap();
    assert!(last < 0.1 * initial, "initial {initial}, final {last}");
}

#[test]
fn deterministic_log_and_params() {
    let data = small_data(16, 2);
    let cfg = quick_config();
    let model = ModelConfig::preset("nano").unwrap();
    let run = || train(build_model(&model, 1).unwrap(), &data, &cfg, None, |_| {}).unwrap();
    let (a, b) = (run(), run());
    assert!(a.log.same_trajectory(&b.log));
    assert_eq!(a.params, b.params);
    assert_eq!(a.log.rows.len(), 6);
    for r in &a.log.rows {
        assert_eq!(r.tokens, r.step * 128);
    }
    assert!(a.log.rows[1].val_loss.is_some() && a.log.rows[0].val_loss.is_none());
    let parsed = LossLog::parse_csv(&a.log.to_csv()).unwrap();
    assert!(parsed.same_trajectory(&a.log));
}

#[test]
fn validation_tracks_training_on_iid_pixels() {
    let data = small_data(64, 3);
    let cfg = TrainConfig {
        total_steps: 200,
        val_every: 50,
        log_every: 50,
        val_fraction: 0.2,
        val_windows: 32,
        tokens_per_step: 256,
        window: Some(32),
        ..quick_config()
    };
    let out = train(build_model(&ModelConfig::preset("nano").unwrap(), 0).unwrap(), &data, &cfg, None, |_| {}).unwrap();
    for r in &out.log.rows {
        let v = r.val_loss.unwrap();
        assert!(v < 3.0 * r.train_loss, "step {}: val {v} train {}", r.step, r.train_loss);
    }
}

#[test]
fn checkpoints_and_nan_abort() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(16, 5);
    let cfg = TrainConfig {
        checkpoint_every: 10,
        ..quick_config()
    };
    let out = train(build_model(&ModelConfig::preset("nano").unwrap(), 0).unwrap(), &data, &cfg, Some(dir.path()), |_| {}).unwrap();
    let ck = read_checkpoint(out.last_checkpoint.as_ref().unwrap()).unwrap();
    assert_eq!(ck.step, 30);
    assert_eq!(ck.params, out.params);

    let blowup = TrainConfig {
        max_lr: 1e30,
        lr_decay_factor: 1.0,
        total_steps: 50,
        checkpoint_every: 1,
        ..quick_config()
    };
    match train(build_model(&ModelConfig::preset("nano").unwrap(), 0).unwrap(), &data, &blowup, Some(dir.path()), |_| {}) {
        Err(Error::NumericalAbort { step, last_checkpoint }) => {
            assert!(step >= 1);
            let p = last_checkpoint.expect("checkpoint before abort");
            assert!(read_checkpoint(&p).unwrap().params.first_non_finite().is_none());
        }
        other => panic!("expected abort, got {:?}", other.map(|o| o.log)),
    }
}

#[test]
fn divergence_limits_usable_dates() {
    let data = small_data(4, 6);
    let cfg = TrainConfig {
        divergence: Some(data.date(16)),
        ..quick_config()
    };
    // 16 usable steps cannot hold a 16-token window plus its target.
    assert!(matches!(
        train(build_model(&ModelConfig::preset("nano").unwrap(), 0).unwrap(), &data, &cfg, None, |_| {}),
        Err(Error::InsufficientHistory { .. })
    ));
}

proptest! {
    #[test]
    fn chinchilla_inverse_exact_on_integers(n in 1u64..(1u64 << 48)) {
        let n = n as f64;
        prop_assert_eq!(chinchilla_params(chinchilla_tokens(n).unwrap()).unwrap(), n);
    }

    #[test]
    fn chinchilla_inverse_within_one_ulp(n in 1e-3f64..1e300) {
        let back = chinchilla_params(chinchilla_tokens(n).unwrap()).unwrap();
        prop_assert!((back - n).abs() <= f64::EPSILON * n, "{} vs {}", back, n);
    }

    #[test]
    fn schedule_bounds(max_lr in 1e-6f64..1e-1, total in 1u64..100_000, step in 0u64..300_000, linear in any::<bool>()) {
        let s = LrSchedule { shape: if linear { LrShape::Linear } else { LrShape::Cosine }, ..LrSchedule::new(max_lr, total) };
        let v = s.at(step);
        prop_assert!(v <= max_lr && v >= s.min_lr());
        prop_assert!(s.at(step + 1) <= v);
        if step as f64 >= s.horizon() {
            prop_assert_eq!(v, s.min_lr());
        }
    }
}
