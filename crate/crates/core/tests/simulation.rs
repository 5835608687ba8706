use prnu_forge::manifest::Role;
use prnu_forge::matcher::ncc_slices;
use prnu_forge::simulator::{capture, plan_dataset, MANIFEST_FILE};
use prnu_forge::{gen_dataset, ImagePlane, SimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn views_differ_at_defaults() {
    let cfg = SimConfig::default();
    let mut min_diff = f64::MAX;
    for i in 0..10 {
        let a = cfg.scene(1, i).unwrap();
        for j in 0..10 {
            let b = cfg.scene(2, j).unwrap();
            let d = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).abs() as f64)
                .sum::<f64>()
                / a.data().len() as f64;
            min_diff = min_diff.min(d);
        }
    }
    assert!(min_diff > 0.02, "{min_diff}");
}

#[test]
fn capture_residual_tracks_true_fingerprint() {
    let cfg = SimConfig::default();
    let sensor = cfg.sensor("sensor_03").unwrap();
    let scene = cfg.scene(1, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let shot = capture(&scene, &sensor, &mut rng).unwrap();
    let rel: Vec<f32> = shot
        .data()
        .iter()
        .zip(scene.data())
        .map(|(c, s)| (c - s) / s)
        .collect();
    let r = ncc_slices(&rel, &sensor.true_fingerprint);
    assert!(r.value > 0.1, "{}", r.value);
}

#[test]
fn dark_scene_yields_clamped_read_noise() {
    let cfg = SimConfig::default();
    let sensor = cfg.sensor("sensor_00").unwrap();
    let dark = ImagePlane::filled(256, 256, 0.0).unwrap();
    let shot = capture(&dark, &sensor, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let d = shot.data();
    let zeros = d.iter().filter(|v| **v == 0.0).count() as f64 / d.len() as f64;
    // half the read noise is negative and clamps to zero
    assert!((zeros - 0.5).abs() < 0.02, "{zeros}");
    let pos: Vec<f64> = d.iter().filter(|v| **v > 0.0).map(|v| *v as f64).collect();
    let mean = pos.iter().sum::<f64>() / pos.len() as f64;
    // half-normal mean sigma * sqrt(2 / pi)
    let expected = cfg.read_noise_std * (2.0 / std::f64::consts::PI).sqrt();
    assert!((mean - expected).abs() < 0.05 * expected, "{mean} vs {expected}");
}

#[test]
fn split_of_ten_sensors() {
    let cfg = SimConfig {
        n_sensors: 10,
        ..SimConfig::default()
    };
    let m = plan_dataset(&cfg).unwrap();
    assert_eq!(m.split.pretrain_devices.len(), 5);
    assert_eq!(m.split.eval_devices.len(), 5);
    assert!(m
        .split
        .pretrain_devices
        .iter()
        .all(|d| !m.split.eval_devices.contains(d)));
}

#[test]
fn small_manifest_layout() {
    let cfg = SimConfig {
        n_sensors: 2,
        images_per_view: 6,
        n_refs: 5,
        ..SimConfig::default()
    };
    let m = plan_dataset(&cfg).unwrap();
    assert_eq!(m.records.len(), 24);
    assert_eq!(m.records.iter().filter(|r| r.role == Role::Reference).count(), 10);
    assert!(m.records.iter().filter(|r| r.view == 2).all(|r| r.role == Role::Test));
}

#[test]
fn regenerated_dataset_is_identical() {
    let cfg = SimConfig {
        n_sensors: 3,
        image_size: (64, 64),
        images_per_view: 6,
        ..SimConfig::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = gen_dataset(&cfg, a.path()).unwrap();
    gen_dataset(&cfg, b.path()).unwrap();
    assert_eq!(
        std::fs::read(a.path().join(MANIFEST_FILE)).unwrap(),
        std::fs::read(b.path().join(MANIFEST_FILE)).unwrap()
    );
    for r in &ma.records {
        assert_eq!(
            std::fs::read(a.path().join(&r.image_path)).unwrap(),
            std::fs::read(b.path().join(&r.image_path)).unwrap(),
            "{}",
            r.image_path
        );
    }
}

#[test]
fn zero_strength_is_rejected() {
    let cfg = SimConfig {
        fingerprint_strength: 0.0,
        ..SimConfig::default()
    };
    assert!(plan_dataset(&cfg).is_err());
}
