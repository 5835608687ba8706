mod common;

use prnu_forge::neural::{
    train, InputNorm, ModelConfig, TrainConfig, TrainingDevice, TrainingSet,
};
use prnu_forge::store::{load_model, save_model};
use prnu_forge::{ComparatorModel, Fingerprint, ImagePlane, ModelCheckpoint, ResidualPlane};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIDE: usize = 32;

/// Devices whose residuals carry their fingerprint at amplitude `mix`.
fn synthetic_set(devices: usize, per_device: usize, mix: f32, seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let n = SIDE * SIDE;
    TrainingSet::new(
        (0..devices)
            .map(|d| {
                let k = noise(n);
                let id = format!("dev{d}");
                let residuals = (0..per_device)
                    .map(|i| {
                        let data = k.iter().zip(noise(n)).map(|(a, b)| mix * a + b).collect();
                        ResidualPlane::new(SIDE, SIDE, data, format!("{id}/{i}")).unwrap()
                    })
                    .collect();
                TrainingDevice {
                    fingerprint: Fingerprint::new(id.clone(), SIDE, SIDE, k, 4, false, (SIDE, SIDE)).unwrap(),
                    sensor_id: id,
                    residuals,
                }
            })
            .collect(),
    )
    .unwrap()
}

fn config(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate: lr,
        batch_size: 8,
        crop_size: SIDE,
        steps_per_epoch: Some(10),
        seed: 5,
        model: ModelConfig {
            channels: vec![4, 8],
            input_norm: InputNorm::Rms,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn loss_moving_average_decreases() {
    let set = synthetic_set(8, 6, 0.5, 1);
    let out = train(&set, &config(5, 1e-2)).unwrap();
    let means = out.epoch_means();
    let avg: Vec<f64> = means.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    assert!(avg.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}

#[test]
fn identical_runs_give_identical_traces() {
    let set = synthetic_set(4, 3, 0.5, 2);
    let a = train(&set, &config(2, 1e-2)).unwrap();
    let b = train(&set, &config(2, 1e-2)).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(a.model.params()), bits(b.model.params()));
    let la: Vec<u64> = a.trace.iter().map(|e| e.loss.to_bits()).collect();
    let lb: Vec<u64> = b.trace.iter().map(|e| e.loss.to_bits()).collect();
    assert_eq!(la, lb);
}

#[test]
fn zero_learning_rate_freezes_the_model() {
    let set = synthetic_set(4, 3, 0.5, 3);
    let cfg = config(2, 0.0);
    let mut init = ComparatorModel::new(cfg.model.clone(), cfg.seed).unwrap();
    let out = train(&set, &cfg).unwrap();
    assert_eq!(out.model.params(), init.params());
    init.set_head(0.0, 0.0);
    let frozen = prnu_forge::neural::train_from(
        &set,
        &cfg,
        init.clone(),
        prnu_forge::neural::AdamState::new(init.param_count()),
    )
    .unwrap();
    assert_eq!(frozen.model.params(), init.params());
    let two_ln2 = 2.0 * std::f64::consts::LN_2;
    assert!(frozen.trace.iter().all(|e| (e.loss - two_ln2).abs() < 1e-12));
}

#[test]
fn saturated_head_has_zero_head_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = ComparatorModel::new(ModelConfig::default(), 1).unwrap();
    model.set_head(0.0, 40.0);
    let inputs: Vec<_> = (0..4).map(|_| common::random_input(&mut rng, 32, 32)).collect();
    let g = model.backward(&inputs, &[true; 4]).unwrap();
    let head = model.param_count() - model.config().channels.last().unwrap() - 1;
    assert!(g.grads[head..].iter().all(|v| *v == 0.0));
}

#[test]
fn saturated_bias_gives_closed_form_probability() {
    let mut model = ComparatorModel::new(ModelConfig::default(), 1).unwrap();
    model.set_head(0.0, 10.0);
    let plane = ImagePlane::from_fn(20, 20, |y, x| ((y * 3 + x) % 5) as f32 - 2.0).unwrap();
    let p = model.forward(&plane).unwrap();
    assert!((p - 0.9999546).abs() < 1e-7, "{p}");
}

#[test]
fn checkpoint_round_trip_preserves_outputs_and_resume_contract() {
    let set = synthetic_set(4, 3, 0.5, 6);
    let out = train(&set, &config(1, 1e-2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let plane = ImagePlane::from_fn(SIDE, SIDE, |y, x| ((y * 7 + x * 3) % 11) as f32 * 0.1 - 0.5).unwrap();
    let with = ModelCheckpoint {
        model: out.model.clone(),
        optimizer: Some(out.optimizer.clone()),
        seed: 5,
        config_snapshot: "{}".into(),
    };
    let without = ModelCheckpoint {
        optimizer: None,
        ..with.clone()
    };
    for (name, ckpt) in [("with.prnm", &with), ("without.prnm", &without)] {
        let path = dir.path().join(name);
        save_model(ckpt, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(
            back.model.forward(&plane).unwrap().to_bits(),
            out.model.forward(&plane).unwrap().to_bits()
        );
        assert_eq!(back.resume_state().is_ok(), ckpt.optimizer.is_some());
    }
}
