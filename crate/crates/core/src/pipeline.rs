//! Glue between images on disk and the scoring/training code: per-level
//! residual extraction, enrollment, galleries and training sets.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoise::{Denoiser, DenoiserConfig};
use crate::error::{Error, Result};
use crate::manifest::{resolve, DatasetManifest, DeviceSplit, ImageRecord, Role};
use crate::neural::{TrainingDevice, TrainingSet};
use crate::plane::{Fingerprint, ImagePlane, ResidualPlane, ResolutionSpec};
use crate::resample::prepare_level;
use crate::signal::{estimate_fingerprint, extract_residual, wiener_postfilter, DEFAULT_WIENER_WINDOW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub resolutions: ResolutionSpec,
    pub denoiser: DenoiserConfig,
    /// Wiener post-filter on every level's fingerprint.
    pub wiener: bool,
    pub wiener_window: usize,
    /// `None` uses the median local variance.
    pub wiener_noise_variance: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            resolutions: ResolutionSpec::new(vec![(192, 192), (256, 256)]).expect("valid"),
            denoiser: DenoiserConfig::default(),
            wiener: true,
            wiener_window: DEFAULT_WIENER_WINDOW,
            wiener_noise_variance: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        ResolutionSpec::new(self.resolutions.levels().to_vec())?;
        if let Some(l) = self.resolutions.levels().iter().find(|(h, w)| *h < 4 || *w < 4) {
            return Err(Error::Config(format!("resolution {l:?} is below 4 pixels")));
        }
        if self.wiener_window < 3 || self.wiener_window % 2 == 0 {
            return Err(Error::Config(format!(
                "wiener_window must be odd and >= 3, got {}",
                self.wiener_window
            )));
        }
        if let Some(nv) = self.wiener_noise_variance {
            if !(nv > 0.0 && nv.is_finite()) {
                return Err(Error::Config("wiener_noise_variance must be > 0".into()));
            }
        }
        self.denoiser.validate()
    }
}

pub struct Pipeline {
    cfg: PipelineConfig,
    denoiser: Box<dyn Denoiser>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let denoiser = cfg.denoiser.build()?;
        Ok(Self { cfg, denoiser })
    }

    /// Uses `denoiser` instead of the one named in the config.
    pub fn with_denoiser(cfg: PipelineConfig, denoiser: Box<dyn Denoiser>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, denoiser })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &ResolutionSpec {
        &self.cfg.resolutions
    }

    /// Pad, resize to `level`, then take the noise residual.
    pub fn level_residual(
        &self,
        image: &ImagePlane,
        level: (usize, usize),
        source_id: &str,
    ) -> Result<ResidualPlane> {
        let scaled = prepare_level(image, level)?;
        extract_residual(&scaled, self.denoiser.as_ref(), source_id)
    }

    /// One residual per level of the spec.
    pub fn residuals(&self, image: &ImagePlane, source_id: &str) -> Result<Vec<ResidualPlane>> {
        self.spec()
            .levels()
            .iter()
            .map(|l| self.level_residual(image, *l, source_id))
            .collect()
    }

    /// Averages `residuals` (all of one level) and applies the post-filter.
    pub fn fingerprint(&self, sensor_id: &str, residuals: &[ResidualPlane]) -> Result<Fingerprint> {
        let fp = estimate_fingerprint(residuals, sensor_id)?;
        if self.cfg.wiener {
            wiener_postfilter(&fp, self.cfg.wiener_window, self.cfg.wiener_noise_variance)
        } else {
            Ok(fp)
        }
    }

    /// Per-level fingerprints of one device from `(source_id, image)` pairs.
    pub fn enroll(&self, sensor_id: &str, images: &[(String, ImagePlane)]) -> Result<Vec<Fingerprint>> {
        if images.is_empty() {
            return Err(Error::MissingReferences(sensor_id.to_string()));
        }
        let per_image = images
            .par_iter()
            .map(|(id, img)| self.residuals(img, id))
            .collect::<Result<Vec<_>>>()?;
        (0..self.spec().len())
            .map(|l| {
                let level: Vec<ResidualPlane> = per_image.iter().map(|r| r[l].clone()).collect();
                self.fingerprint(sensor_id, &level)
            })
            .collect()
    }
}

/// Why an image was read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Reference,
    Query,
    Training,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Access {
    pub image_path: String,
    pub sensor_id: String,
    pub view: u8,
    pub role: Role,
    pub purpose: Purpose,
}

/// Records every image read so protocol rules can be checked afterwards.
#[derive(Debug, Default)]
pub struct AccessLog {
    entries: Mutex<Vec<Access>>,
}

impl AccessLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, rec: &ImageRecord, purpose: Purpose) {
        self.entries.lock().expect("access log poisoned").push(Access {
            image_path: rec.image_path.clone(),
            sensor_id: rec.sensor_id.clone(),
            view: rec.view,
            role: rec.role,
            purpose,
        });
    }

    /// Sorted copy of all entries.
    pub fn entries(&self) -> Vec<Access> {
        let mut v = self.entries.lock().expect("access log poisoned").clone();
        v.sort();
        v
    }

    /// References and training images come from view 1 only, queries from
    /// view 2 only, and training never touches evaluation devices.
    pub fn check_protocol(&self, manifest: &DatasetManifest) -> Result<()> {
        let split: BTreeMap<&str, DeviceSplit> = manifest
            .devices
            .iter()
            .map(|d| (d.sensor_id.as_str(), d.split))
            .collect();
        for a in self.entries() {
            let ok = match a.purpose {
                Purpose::Reference => a.view == 1 && a.role == Role::Reference,
                Purpose::Query => a.view == 2 && a.role == Role::Test,
                Purpose::Training => {
                    a.view == 1
                        && matches!(a.role, Role::Reference | Role::Pretrain)
                        && split.get(a.sensor_id.as_str()) == Some(&DeviceSplit::Pretrain)
                }
            };
            if !ok {
                return Err(Error::Manifest(format!(
                    "protocol violation: {} (view {}, {:?}) read as {:?}",
                    a.image_path, a.view, a.role, a.purpose
                )));
            }
        }
        Ok(())
    }
}

pub fn load_record(
    root: &Path,
    rec: &ImageRecord,
    purpose: Purpose,
    log: Option<&AccessLog>,
) -> Result<ImagePlane> {
    if let Some(log) = log {
        log.record(rec, purpose);
    }
    ImagePlane::load_png(resolve(root, rec))
}

/// Per-level fingerprints of every device, keyed by sensor id.
#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    spec: ResolutionSpec,
    devices: Vec<(String, Vec<Fingerprint>)>,
}

impl Gallery {
    /// Devices are sorted by id; each must have one fingerprint per level.
    pub fn new(spec: ResolutionSpec, mut devices: Vec<(String, Vec<Fingerprint>)>) -> Result<Self> {
        if devices.is_empty() {
            return Err(Error::EmptyInput("empty gallery"));
        }
        devices.sort_by(|a, b| a.0.cmp(&b.0));
        for w in devices.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Format(format!("device {} enrolled twice", w[0].0)));
            }
        }
        for (id, fps) in &devices {
            if fps.len() != spec.len() {
                return Err(Error::Format(format!(
                    "device {id} has {} levels, expected {}",
                    fps.len(),
                    spec.len()
                )));
            }
            for (fp, level) in fps.iter().zip(spec.levels()) {
                if fp.dims() != *level || fp.sensor_id() != id {
                    return Err(Error::Format(format!(
                        "device {id}: fingerprint {} {:?} does not match level {level:?}",
                        fp.sensor_id(),
                        fp.dims()
                    )));
                }
            }
        }
        Ok(Self { spec, devices })
    }

    /// Groups a flat store by sensor id. The levels are taken from the
    /// first device's resolution tags, in store order.
    pub fn from_store(fps: Vec<Fingerprint>) -> Result<Self> {
        let first = fps.first().ok_or(Error::EmptyInput("fingerprint store is empty"))?;
        let first_id = first.sensor_id().to_string();
        let levels: Vec<(usize, usize)> = fps
            .iter()
            .filter(|f| f.sensor_id() == first_id)
            .map(|f| f.resolution_tag())
            .collect();
        let spec = ResolutionSpec::new(levels)?;
        let mut grouped: BTreeMap<String, Vec<Fingerprint>> = BTreeMap::new();
        for fp in fps {
            grouped.entry(fp.sensor_id().to_string()).or_default().push(fp);
        }
        let mut devices = Vec::with_capacity(grouped.len());
        for (id, mut list) in grouped {
            let mut ordered = Vec::with_capacity(spec.len());
            for level in spec.levels() {
                let pos = list
                    .iter()
                    .position(|f| f.resolution_tag() == *level)
                    .ok_or_else(|| Error::Format(format!("device {id} lacks level {level:?}")))?;
                ordered.push(list.swap_remove(pos));
            }
            if !list.is_empty() {
                return Err(Error::Format(format!("device {id} has extra levels")));
            }
            devices.push((id, ordered));
        }
        Self::new(spec, devices)
    }

    /// Flat list in device order, levels in spec order.
    pub fn to_store(&self) -> Vec<Fingerprint> {
        self.devices.iter().flat_map(|(_, f)| f.iter().cloned()).collect()
    }

    pub fn spec(&self) -> &ResolutionSpec {
        &self.spec
    }

    pub fn sensor_ids(&self) -> Vec<&str> {
        self.devices.iter().map(|(id, _)| id.as_str()).collect()
    }

    pub fn fingerprints(&self) -> Vec<Vec<Fingerprint>> {
        self.devices.iter().map(|(_, f)| f.clone()).collect()
    }

    pub fn devices(&self) -> &[(String, Vec<Fingerprint>)] {
        &self.devices
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }
}

fn load_all(
    root: &Path,
    records: &[&ImageRecord],
    purpose: Purpose,
    log: Option<&AccessLog>,
) -> Result<Vec<(String, ImagePlane)>> {
    records
        .par_iter()
        .map(|r| Ok((r.image_path.clone(), load_record(root, r, purpose, log)?)))
        .collect()
}

/// Enrolls `devices` from their reference images.
pub fn enroll_devices(
    manifest: &DatasetManifest,
    root: &Path,
    pipeline: &Pipeline,
    devices: &[String],
    log: Option<&AccessLog>,
) -> Result<Gallery> {
    let enrolled = devices
        .par_iter()
        .map(|id| {
            let refs: Vec<&ImageRecord> = manifest.records_for(id, Role::Reference).collect();
            if refs.is_empty() {
                return Err(Error::MissingReferences(id.clone()));
            }
            let images = load_all(root, &refs, Purpose::Reference, log)?;
            Ok((id.clone(), pipeline.enroll(id, &images)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Gallery::new(pipeline.spec().clone(), enrolled)
}

/// Enrolls every evaluation device of the manifest.
pub fn enroll_manifest(
    manifest: &DatasetManifest,
    root: &Path,
    pipeline: &Pipeline,
    log: Option<&AccessLog>,
) -> Result<Gallery> {
    manifest.validate()?;
    enroll_devices(manifest, root, pipeline, &manifest.split.eval_devices, log)
}

/// Pretraining data at the largest level: each pretrain device's
/// fingerprint from its references plus residuals of its pretrain images.
pub fn training_set(
    manifest: &DatasetManifest,
    root: &Path,
    pipeline: &Pipeline,
    log: Option<&AccessLog>,
) -> Result<TrainingSet> {
    manifest.validate()?;
    let level = pipeline.spec().largest();
    let devices = manifest
        .split
        .pretrain_devices
        .par_iter()
        .map(|id| {
            let refs: Vec<&ImageRecord> = manifest.records_for(id, Role::Reference).collect();
            if refs.is_empty() {
                return Err(Error::MissingReferences(id.clone()));
            }
            let ref_res = load_all(root, &refs, Purpose::Training, log)?
                .iter()
                .map(|(sid, img)| pipeline.level_residual(img, level, sid))
                .collect::<Result<Vec<_>>>()?;
            let fingerprint = pipeline.fingerprint(id, &ref_res)?;
            let train: Vec<&ImageRecord> = manifest.records_for(id, Role::Pretrain).collect();
            let residuals = load_all(root, &train, Purpose::Training, log)?
                .iter()
                .map(|(sid, img)| pipeline.level_residual(img, level, sid))
                .collect::<Result<Vec<_>>>()?;
            Ok(TrainingDevice {
                sensor_id: id.clone(),
                fingerprint,
                residuals,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TrainingSet::new(devices)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp(id: &str, n: usize) -> Fingerprint {
        let data = (0..n * n).map(|i| (i as f32).sin()).collect();
        Fingerprint::new(id, n, n, data, 1, true, (n, n)).unwrap()
    }

    #[test]
    fn gallery_store_round_trip() {
        let store = vec![fp("b", 4), fp("b", 8), fp("a", 8), fp("a", 4)];
        let g = Gallery::from_store(store).unwrap();
        assert_eq!(g.sensor_ids(), ["a", "b"]);
        assert_eq!(g.spec().levels(), &[(4, 4), (8, 8)]);
        assert_eq!(Gallery::from_store(g.to_store()).unwrap(), g);
    }

    #[test]
    fn gallery_rejects_bad_stores() {
        assert!(Gallery::from_store(vec![]).is_err());
        assert!(Gallery::from_store(vec![fp("a", 4), fp("a", 8), fp("b", 4)]).is_err());
        assert!(Gallery::from_store(vec![fp("a", 4), fp("b", 4), fp("b", 8)]).is_err());
    }

    #[test]
    fn enroll_counts_levels() {
        let cfg = PipelineConfig {
            resolutions: ResolutionSpec::parse("16x16,24x24").unwrap(),
            denoiser: DenoiserConfig {
                kind: crate::denoise::DenoiserKind::Gaussian,
                ..Default::default()
            },
            ..Default::default()
        };
        let p = Pipeline::new(cfg).unwrap();
        let img = |s: f32| ImagePlane::from_fn(20, 30, |y, x| ((y * 7 + x * 3) as f32 * s).sin() * 0.4 + 0.5).unwrap();
        let fps = p
            .enroll("cam", &[("a".into(), img(0.3)), ("b".into(), img(0.7))])
            .unwrap();
        assert_eq!(fps.len(), 2);
        assert_eq!(fps[1].dims(), (24, 24));
        assert!(fps.iter().all(|f| f.wiener_applied() && f.n_images() == 2));
        assert!(matches!(p.enroll("cam", &[]), Err(Error::MissingReferences(_))));
    }
}
