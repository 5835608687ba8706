//! Dataset manifest: which image belongs to which sensor, view and role.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// View-1 image used to estimate the device fingerprint.
    Reference,
    /// View-1 non-reference image of a pretraining device.
    Pretrain,
    /// View-2 image used as an identification query.
    Test,
    /// View-1 non-reference image of an evaluation device; never read.
    Unused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceSplit {
    Pretrain,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceEntry {
    pub sensor_id: String,
    pub split: DeviceSplit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Relative to the manifest's directory.
    pub image_path: String,
    pub sensor_id: String,
    pub view: u8,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub pretrain_devices: Vec<String>,
    pub eval_devices: Vec<String>,
    pub n_refs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub devices: Vec<DeviceEntry>,
    pub records: Vec<ImageRecord>,
    pub split: SplitInfo,
    pub config_snapshot: SimConfig,
}

impl DatasetManifest {
    /// Checks the role/view/split constraints.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Manifest(m));
        let pre: BTreeSet<&str> = self.split.pretrain_devices.iter().map(String::as_str).collect();
        let eval: BTreeSet<&str> = self.split.eval_devices.iter().map(String::as_str).collect();
        if let Some(both) = pre.intersection(&eval).next() {
            return err(format!("device {both} is in both pretrain and eval splits"));
        }
        let mut known = BTreeMap::new();
        for d in &self.devices {
            let listed = match d.split {
                DeviceSplit::Pretrain => pre.contains(d.sensor_id.as_str()),
                DeviceSplit::Eval => eval.contains(d.sensor_id.as_str()),
            };
            if !listed {
                return err(format!("device {} is missing from its split list", d.sensor_id));
            }
            if known.insert(d.sensor_id.as_str(), d.split).is_some() {
                return err(format!("device {} listed twice", d.sensor_id));
            }
        }
        if known.len() != pre.len() + eval.len() {
            return err("split lists name devices absent from the device table".into());
        }
        let mut refs: BTreeMap<&str, usize> = known.keys().map(|k| (*k, 0)).collect();
        for r in &self.records {
            let Some(split) = known.get(r.sensor_id.as_str()) else {
                return err(format!("record {} names unknown device {}", r.image_path, r.sensor_id));
            };
            match (r.view, r.role) {
                (1, Role::Reference) => *refs.get_mut(r.sensor_id.as_str()).expect("known") += 1,
                (1, Role::Pretrain) if *split == DeviceSplit::Pretrain => {}
                (1, Role::Pretrain) => {
                    return err(format!("eval device image {} has pretrain role", r.image_path))
                }
                (1, Role::Unused) => {}
                (2, Role::Test) => {}
                (v, role) => {
                    return err(format!(
                        "record {} has role {role:?} in view {v}",
                        r.image_path
                    ))
                }
            }
        }
        for (dev, n) in refs {
            if n != self.split.n_refs {
                return err(format!(
                    "device {dev} has {n} reference images, expected {}",
                    self.split.n_refs
                ));
            }
        }
        Ok(())
    }

    pub fn records_for<'a>(
        &'a self,
        sensor_id: &'a str,
        role: Role,
    ) -> impl Iterator<Item = &'a ImageRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| r.sensor_id == sensor_id && r.role == role)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Resolves a record path against the directory holding the manifest.
pub fn resolve(root: &Path, record: &ImageRecord) -> PathBuf {
    root.join(&record.image_path)
}
