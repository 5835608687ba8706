//! Synthetic sensors and captures with a known PRNU ground truth.
//!
//! Capture model: `I = clamp(S · (1 + K) + η)` where `S` is the scene, `K`
//! the sensor's multiplicative pattern and `η` Gaussian shot noise
//! (std `shot · √S`) plus read noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoise::denoise_gaussian;
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, DeviceEntry, DeviceSplit, ImageRecord, Role, SplitInfo};
use crate::plane::ImagePlane;

/// Smallest scene side.
pub const MIN_SCENE_SIDE: usize = 64;

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable seed derivation from a parent seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(mix64(h)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorProfile {
    pub sensor_id: String,
    pub height: usize,
    pub width: usize,
    /// Zero-mean multiplicative pattern, row-major.
    pub true_fingerprint: Vec<f32>,
    pub strength: f64,
    pub read_noise_std: f64,
    pub shot_noise_scale: f64,
}

impl SensorProfile {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn fingerprint_plane(&self) -> ImagePlane {
        ImagePlane::new(self.height, self.width, self.true_fingerprint.clone())
            .expect("profile planes are valid")
    }
}

/// Draws an i.i.d. normal pattern of std `strength`, then removes its mean.
pub fn gen_sensor<R: Rng>(
    rng: &mut R,
    sensor_id: impl Into<String>,
    size: (usize, usize),
    strength: f64,
    read_noise_std: f64,
    shot_noise_scale: f64,
) -> Result<SensorProfile> {
    if !(strength > 0.0 && strength.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "fingerprint strength must be positive, got {strength}"
        )));
    }
    if !(read_noise_std >= 0.0 && shot_noise_scale >= 0.0) {
        return Err(Error::InvalidArgument("noise levels must be >= 0".into()));
    }
    let n = size.0 * size.1;
    let dist = Normal::new(0.0, strength).expect("valid std");
    let raw: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    Ok(SensorProfile {
        sensor_id: sensor_id.into(),
        height: size.0,
        width: size.1,
        true_fingerprint: raw.into_iter().map(|v| (v - mean) as f32).collect(),
        strength,
        read_noise_std,
        shot_noise_scale,
    })
}

/// A smooth textured scene in `[0.1, 0.9]`: 3 to 8 sinusoidal gratings plus
/// low-pass filtered noise. The stream depends on both `rng` and
/// `view_seed`, so different views never share scenes.
pub fn gen_scene<R: Rng>(rng: &mut R, view_seed: u64, size: (usize, usize)) -> Result<ImagePlane> {
    let (h, w) = size;
    if h < MIN_SCENE_SIDE || w < MIN_SCENE_SIDE {
        return Err(Error::InvalidArgument(format!(
            "scenes must be at least {MIN_SCENE_SIDE}x{MIN_SCENE_SIDE}, got {h}x{w}"
        )));
    }
    let mut local = ChaCha8Rng::seed_from_u64(mix64(view_seed ^ mix64(rng.next_u64())));
    let n_gratings = local.random_range(3..=8);
    let side = h.max(w) as f64;
    let gratings: Vec<(f64, f64, f64, f64)> = (0..n_gratings)
        .map(|_| {
            let cycles = local.random_range(0.5..16.0);
            let theta = local.random_range(0.0..std::f64::consts::PI);
            let phase = local.random_range(0.0..std::f64::consts::TAU);
            let amp = local.random_range(0.2..1.0);
            let k = std::f64::consts::TAU * cycles / side;
            (k * theta.cos(), k * theta.sin(), phase, amp)
        })
        .collect();
    let noise: Vec<f32> = (0..h * w)
        .map(|_| StandardNormal.sample(&mut local))
        .collect();
    let blurred = denoise_gaussian(&ImagePlane::new(h, w, noise)?, 4.0)?;
    let noise_gain = local.random_range(2.0..6.0);
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut v = noise_gain * blurred.get(y, x) as f64;
            for (ky, kx, ph, amp) in &gratings {
                v += amp * (ky * y as f64 + kx * x as f64 + ph).sin();
            }
            values.push(v);
        }
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    let data = values
        .into_iter()
        .map(|v| (0.1 + 0.8 * (v - lo) / span).clamp(0.1, 0.9) as f32)
        .collect();
    ImagePlane::luminance(h, w, data)
}

/// Photographs `scene` with `sensor`.
pub fn capture<R: Rng>(scene: &ImagePlane, sensor: &SensorProfile, rng: &mut R) -> Result<ImagePlane> {
    if scene.dims() != sensor.dims() {
        return Err(Error::DimensionMismatch {
            expected: sensor.dims(),
            actual: scene.dims(),
        });
    }
    let data = scene
        .data()
        .iter()
        .zip(&sensor.true_fingerprint)
        .map(|(s, k)| {
            let s = *s as f64;
            let mut v = s * (1.0 + *k as f64);
            if sensor.shot_noise_scale > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                v += sensor.shot_noise_scale * s.max(0.0).sqrt() * z;
            }
            if sensor.read_noise_std > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                v += sensor.read_noise_std * z;
            }
            v.clamp(0.0, 1.0) as f32
        })
        .collect();
    ImagePlane::luminance(scene.height(), scene.width(), data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_sensors: usize,
    pub image_size: (usize, usize),
    pub images_per_view: usize,
    pub n_refs: usize,
    pub fingerprint_strength: f64,
    pub read_noise_std: f64,
    pub shot_noise_scale: f64,
    pub view_seeds: (u64, u64),
    pub pretrain_fraction: f64,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_sensors: 16,
            image_size: (256, 256),
            images_per_view: 20,
            n_refs: 5,
            fingerprint_strength: 0.02,
            read_noise_std: 0.01,
            shot_noise_scale: 0.02,
            view_seeds: (1, 2),
            pretrain_fraction: 0.5,
            rng_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_sensors < 2 {
            return bad(format!("n_sensors must be >= 2, got {}", self.n_sensors));
        }
        if self.n_refs == 0 || self.images_per_view < self.n_refs {
            return bad(format!(
                "images_per_view ({}) must be >= n_refs ({}) >= 1",
                self.images_per_view, self.n_refs
            ));
        }
        if self.view_seeds.0 == self.view_seeds.1 {
            return bad("the two view seeds must differ".into());
        }
        if !(self.pretrain_fraction > 0.0 && self.pretrain_fraction < 1.0) {
            return bad("pretrain_fraction must lie in (0, 1)".into());
        }
        if !(self.fingerprint_strength > 0.0) {
            return bad("fingerprint_strength must be > 0".into());
        }
        if !(self.read_noise_std >= 0.0 && self.shot_noise_scale >= 0.0) {
            return bad("noise levels must be >= 0".into());
        }
        let (h, w) = self.image_size;
        if h < MIN_SCENE_SIDE || w < MIN_SCENE_SIDE {
            return bad(format!("image_size must be at least {MIN_SCENE_SIDE} per side"));
        }
        Ok(())
    }

    pub fn sensor_ids(&self) -> Vec<String> {
        let digits = (self.n_sensors - 1).to_string().len().max(2);
        (0..self.n_sensors)
            .map(|i| format!("sensor_{i:0digits$}"))
            .collect()
    }

    /// Number of pretraining devices, at least one on each side.
    pub fn n_pretrain(&self) -> usize {
        ((self.n_sensors as f64 * self.pretrain_fraction).round() as usize).clamp(1, self.n_sensors - 1)
    }

    pub fn sensor(&self, sensor_id: &str) -> Result<SensorProfile> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.rng_seed, sensor_id));
        gen_sensor(
            &mut rng,
            sensor_id,
            self.image_size,
            self.fingerprint_strength,
            self.read_noise_std,
            self.shot_noise_scale,
        )
    }

    /// Scene `index` of view 1 or 2, shared by every sensor.
    pub fn scene(&self, view: u8, index: usize) -> Result<ImagePlane> {
        let view_seed = if view == 1 { self.view_seeds.0 } else { self.view_seeds.1 };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.rng_seed,
            &format!("scene/{view}/{index}"),
        ));
        gen_scene(&mut rng, view_seed, self.image_size)
    }

    /// Deterministic pretrain/eval assignment.
    pub fn device_split(&self) -> (Vec<String>, Vec<String>) {
        let mut ids = self.sensor_ids();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.rng_seed, "split"));
        // Fisher-Yates
        for i in (1..ids.len()).rev() {
            let j = rng.random_range(0..=i);
            ids.swap(i, j);
        }
        let k = self.n_pretrain();
        let mut pre = ids[..k].to_vec();
        let mut eval = ids[k..].to_vec();
        pre.sort();
        eval.sort();
        (pre, eval)
    }
}

pub fn image_rel_path(sensor_id: &str, view: u8, index: usize) -> String {
    format!("{sensor_id}/{view}/{index:03}.png")
}

/// Builds the manifest for `cfg` without touching the filesystem.
pub fn plan_dataset(cfg: &SimConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let (pre, eval) = cfg.device_split();
    let mut devices = Vec::with_capacity(cfg.n_sensors);
    let mut records = Vec::with_capacity(cfg.n_sensors * cfg.images_per_view * 2);
    for id in cfg.sensor_ids() {
        let split = if pre.contains(&id) {
            DeviceSplit::Pretrain
        } else {
            DeviceSplit::Eval
        };
        for view in [1u8, 2] {
            for index in 0..cfg.images_per_view {
                let role = match (view, index < cfg.n_refs, split) {
                    (1, true, _) => Role::Reference,
                    (1, false, DeviceSplit::Pretrain) => Role::Pretrain,
                    (1, false, DeviceSplit::Eval) => Role::Unused,
                    _ => Role::Test,
                };
                records.push(ImageRecord {
                    image_path: image_rel_path(&id, view, index),
                    sensor_id: id.clone(),
                    view,
                    role,
                });
            }
        }
        devices.push(DeviceEntry {
            sensor_id: id,
            split,
        });
    }
    let manifest = DatasetManifest {
        devices,
        records,
        split: SplitInfo {
            pretrain_devices: pre,
            eval_devices: eval,
            n_refs: cfg.n_refs,
        },
        config_snapshot: cfg.clone(),
    };
    manifest.validate()?;
    Ok(manifest)
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Renders every capture to `<out>/<sensor>/<view>/<index>.png` and writes
/// `<out>/manifest.json`.
pub fn gen_dataset(cfg: &SimConfig, out: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out = out.as_ref();
    let manifest = plan_dataset(cfg)?;
    let scenes: Vec<Vec<ImagePlane>> = [1u8, 2]
        .iter()
        .map(|&v| {
            (0..cfg.images_per_view)
                .into_par_iter()
                .map(|i| cfg.scene(v, i))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    cfg.sensor_ids().par_iter().try_for_each(|id| -> Result<()> {
        let sensor = cfg.sensor(id)?;
        for view in [1u8, 2] {
            let dir = out.join(id).join(view.to_string());
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.rng_seed, &format!("{id}/capture/{view}")));
            for (index, scene) in scenes[view as usize - 1].iter().enumerate() {
                let img = capture(scene, &sensor, &mut rng)?;
                img.save_png16(out.join(image_rel_path(id, view, index)))?;
            }
        }
        Ok(())
    })?;

    crate::store::save_manifest(&manifest, out.join(MANIFEST_FILE))?;
    Ok(manifest)
}
