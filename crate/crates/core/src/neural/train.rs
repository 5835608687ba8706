//! Pair sampling and the BCE training loop.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::{ComparatorModel, ModelConfig, PreparedInput};
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::plane::{Fingerprint, ImagePlane, ResidualPlane};

/// Keeps the sampler stream apart from the weight-init stream.
const SAMPLER_STREAM: u64 = 0x5eed_0f_5a_4d_70_1e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Number of (positive, negative) pairs per step.
    pub batch_size: usize,
    pub seed: u64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// Defaults to `ceil(pretrain images / batch_size)`.
    pub steps_per_epoch: Option<usize>,
    /// Side of the square Hadamard crops fed to the network.
    pub crop_size: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 1e-3,
            batch_size: 8,
            seed: 0,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            steps_per_epoch: None,
            crop_size: 64,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be >= 0".into()));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be > 0".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch must be >= 1".into()));
        }
        if self.crop_size < super::model::MIN_INPUT_SIDE {
            return Err(Error::Config(format!(
                "crop_size must be >= {}",
                super::model::MIN_INPUT_SIDE
            )));
        }
        self.model.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            eps: self.adam_eps,
        }
    }
}

/// One pretraining device: its fingerprint and the residuals of its
/// non-reference images.
#[derive(Debug, Clone)]
pub struct TrainingDevice {
    pub sensor_id: String,
    pub fingerprint: Fingerprint,
    pub residuals: Vec<ResidualPlane>,
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    devices: Vec<TrainingDevice>,
}

impl TrainingSet {
    pub fn new(devices: Vec<TrainingDevice>) -> Result<Self> {
        if devices.len() < 2 {
            return Err(Error::Config(format!(
                "training needs at least 2 devices, got {}",
                devices.len()
            )));
        }
        for d in &devices {
            if d.residuals.is_empty() {
                return Err(Error::Config(format!(
                    "device {} has no training images",
                    d.sensor_id
                )));
            }
            if let Some(r) = d.residuals.iter().find(|r| r.dims() != d.fingerprint.dims()) {
                return Err(Error::DimensionMismatch {
                    expected: d.fingerprint.dims(),
                    actual: r.dims(),
                });
            }
        }
        Ok(Self { devices })
    }

    pub fn devices(&self) -> &[TrainingDevice] {
        &self.devices
    }

    pub fn image_count(&self) -> usize {
        self.devices.iter().map(|d| d.residuals.len()).sum()
    }
}

/// Indices into a [`TrainingSet`]: `(device, residual)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSample {
    pub fingerprint_device: usize,
    pub positive: (usize, usize),
    pub negative: (usize, usize),
}

/// Draws `batch_size` triplets: a uniform device, a uniform residual of
/// that device, and a uniform residual of a uniform other device.
pub fn sample_batch<R: Rng>(
    set: &TrainingSet,
    rng: &mut R,
    batch_size: usize,
) -> Result<Vec<TrainSample>> {
    let d = set.devices.len();
    if d < 2 {
        return Err(Error::Config("sampling needs at least 2 devices".into()));
    }
    Ok((0..batch_size)
        .map(|_| {
            let i = rng.random_range(0..d);
            let p = rng.random_range(0..set.devices[i].residuals.len());
            let k = rng.random_range(0..d - 1);
            let j = if k >= i { k + 1 } else { k };
            let n = rng.random_range(0..set.devices[j].residuals.len());
            TrainSample {
                fingerprint_device: i,
                positive: (i, p),
                negative: (j, n),
            }
        })
        .collect())
}

/// Hadamard product of a square window of `fp` and `res`.
pub fn hadamard_crop(
    fp: &Fingerprint,
    res: &ResidualPlane,
    y0: usize,
    x0: usize,
    size: (usize, usize),
) -> Result<ImagePlane> {
    let (h, w) = size;
    let (fh, fw) = fp.dims();
    if res.dims() != fp.dims() {
        return Err(Error::DimensionMismatch {
            expected: fp.dims(),
            actual: res.dims(),
        });
    }
    if y0 + h > fh || x0 + w > fw {
        return Err(Error::InvalidArgument("crop outside the plane".into()));
    }
    let mut data = Vec::with_capacity(h * w);
    for y in y0..y0 + h {
        let a = &fp.data()[y * fw + x0..][..w];
        let b = &res.data()[y * fw + x0..][..w];
        data.extend(a.iter().zip(b).map(|(p, q)| p * q));
    }
    ImagePlane::new(h, w, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub epoch: usize,
    pub step: usize,
    /// Mean pair loss of the batch.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ComparatorModel,
    pub optimizer: AdamState,
    pub trace: Vec<LossEntry>,
}

impl TrainOutcome {
    /// Mean loss of every epoch, in order.
    pub fn epoch_means(&self) -> Vec<f64> {
        epoch_means(&self.trace)
    }
}

pub fn epoch_means(trace: &[LossEntry]) -> Vec<f64> {
    let epochs = trace.iter().map(|e| e.epoch + 1).max().unwrap_or(0);
    (0..epochs)
        .map(|ep| {
            let losses: Vec<f64> = trace.iter().filter(|e| e.epoch == ep).map(|e| e.loss).collect();
            losses.iter().sum::<f64>() / losses.len() as f64
        })
        .collect()
}

fn crop_origin<R: Rng>(rng: &mut R, dims: (usize, usize), crop: usize) -> (usize, usize, (usize, usize)) {
    let ch = crop.min(dims.0);
    let cw = crop.min(dims.1);
    let y0 = rng.random_range(0..=dims.0 - ch);
    let x0 = rng.random_range(0..=dims.1 - cw);
    (y0, x0, (ch, cw))
}

/// Builds the network inputs of one batch: positive then negative per sample.
pub fn batch_inputs<R: Rng>(
    model: &ComparatorModel,
    set: &TrainingSet,
    samples: &[TrainSample],
    rng: &mut R,
    crop: usize,
) -> Result<(Vec<PreparedInput>, Vec<bool>)> {
    let mut inputs = Vec::with_capacity(2 * samples.len());
    let mut labels = Vec::with_capacity(2 * samples.len());
    for s in samples {
        let fp = &set.devices[s.fingerprint_device].fingerprint;
        for ((dev, idx), label) in [(s.positive, true), (s.negative, false)] {
            let res = &set.devices[dev].residuals[idx];
            let (y0, x0, size) = crop_origin(rng, fp.dims(), crop);
            let plane = hadamard_crop(fp, res, y0, x0, size)?;
            inputs.push(model.prepare(&plane)?);
            labels.push(label);
        }
    }
    Ok((inputs, labels))
}

/// Trains a fresh comparator. Single-threaded and fully determined by `cfg`.
pub fn train(set: &TrainingSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = ComparatorModel::new(cfg.model.clone(), cfg.seed)?;
    let optimizer = AdamState::new(model.param_count());
    train_from(set, cfg, model, optimizer)
}

/// Continues training from an existing model and optimizer state.
pub fn train_from(
    set: &TrainingSet,
    cfg: &TrainConfig,
    mut model: ComparatorModel,
    mut optimizer: AdamState,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if optimizer.m.len() != model.param_count() {
        return Err(Error::InvalidArgument(
            "optimizer state does not match the model".into(),
        ));
    }
    let adam = cfg.adam();
    let steps = cfg
        .steps_per_epoch
        .unwrap_or_else(|| set.image_count().div_ceil(cfg.batch_size));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SAMPLER_STREAM);
    let mut trace = Vec::with_capacity(cfg.epochs * steps);
    for epoch in 0..cfg.epochs {
        for step in 0..steps {
            let samples = sample_batch(set, &mut rng, cfg.batch_size)?;
            let (inputs, labels) = batch_inputs(&model, set, &samples, &mut rng, cfg.crop_size)?;
            let g = model.backward(&inputs, &labels)?;
            // backward averages over the 2B samples; report per pair
            let loss = 2.0 * g.loss;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    detail: format!("loss {loss}"),
                });
            }
            adam_step(model.params_mut(), &g.grads, &mut optimizer, &adam).map_err(|e| {
                Error::Diverged {
                    epoch,
                    step,
                    detail: e.to_string(),
                }
            })?;
            trace.push(LossEntry { epoch, step, loss });
        }
    }
    Ok(TrainOutcome {
        model,
        optimizer,
        trace,
    })
}

/// Writes the loss trace as `epoch,step,loss`.
pub fn write_loss_csv(trace: &[LossEntry], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,step,loss")?;
    for e in trace {
        writeln!(out, "{},{},{}", e.epoch, e.step, sig9(e.loss))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(devices: usize, per_device: usize) -> TrainingSet {
        let mk = |id: usize, k: usize| {
            ResidualPlane::new(16, 16, vec![(id * 10 + k) as f32 * 1e-3; 256], format!("{id}/{k}"))
                .unwrap()
        };
        TrainingSet::new(
            (0..devices)
                .map(|d| TrainingDevice {
                    sensor_id: format!("dev{d:02}"),
                    fingerprint: Fingerprint::from_residual(format!("dev{d:02}"), &mk(d, 99)),
                    residuals: (0..per_device).map(|k| mk(d, k)).collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn needs_two_devices() {
        let one = set(2, 1).devices[..1].to_vec();
        assert!(TrainingSet::new(one).is_err());
    }

    #[test]
    fn two_devices_always_pick_the_other() {
        let s = set(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in sample_batch(&s, &mut rng, 500).unwrap() {
            assert_eq!(t.negative.0, 1 - t.fingerprint_device);
            assert_eq!(t.positive.0, t.fingerprint_device);
        }
    }

    #[test]
    fn device_frequencies_are_uniform() {
        let s = set(10, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0usize; 10];
        for t in sample_batch(&s, &mut rng, 10_000).unwrap() {
            counts[t.fingerprint_device] += 1;
            assert_ne!(t.negative.0, t.fingerprint_device);
            assert_eq!(t.positive.0, t.fingerprint_device);
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((f - 0.1).abs() <= 0.02, "{f}");
        }
    }

    #[test]
    fn relabeling_permutes_the_transcript() {
        let s = set(5, 3);
        let perm = [3usize, 0, 4, 1, 2];
        let permuted =
            TrainingSet::new(perm.iter().map(|&i| s.devices[i].clone()).collect()).unwrap();
        let a = sample_batch(&s, &mut ChaCha8Rng::seed_from_u64(9), 200).unwrap();
        let b = sample_batch(&permuted, &mut ChaCha8Rng::seed_from_u64(9), 200).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
            assert_eq!(
                permuted.devices[y.fingerprint_device].sensor_id,
                s.devices[perm[x.fingerprint_device]].sensor_id
            );
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            crop_size: 8,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hadamard_crop_window() {
        let s = set(2, 1);
        let d = &s.devices[0];
        let c = hadamard_crop(&d.fingerprint, &d.residuals[0], 2, 3, (4, 5)).unwrap();
        assert_eq!(c.dims(), (4, 5));
        let expected = d.fingerprint.data()[0] * d.residuals[0].data()[0];
        assert!(c.data().iter().all(|v| *v == expected));
        assert!(hadamard_crop(&d.fingerprint, &d.residuals[0], 14, 0, (4, 4)).is_err());
    }

    #[test]
    fn loss_csv_format() {
        let mut buf = Vec::new();
        write_loss_csv(
            &[LossEntry {
                epoch: 0,
                step: 1,
                loss: 1.5,
            }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,step,loss\n0,1,1.50000000\n");
    }
}
