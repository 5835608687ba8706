//! Binary persistence for fingerprints and comparator checkpoints.
//!
//! Fingerprint store (`PRNF`, version 1), little-endian:
//!
//! ```text
//! magic[4] version:u32 count:u32
//! per entry:
//!   id_len:u32 id[id_len] height:u32 width:u32 n_images:u32
//!   wiener:u8 res_h:u32 res_w:u32 payload:f32[height*width]
//! ```
//!
//! Model checkpoint (`PRNM`, version 1), little-endian:
//!
//! ```text
//! magic[4] version:u32 input_norm:u8 n_layers:u32 channels:u32[n_layers]
//! param_count:u64 params:f64[param_count]
//! has_optimizer:u8 [step:u64 m:f64[param_count] v:f64[param_count]]
//! seed:u64 config_len:u32 config[config_len]   (UTF-8 JSON)
//! ```
//!
//! Every length is checked against the remaining bytes before anything is
//! allocated, and all writes go through a temp file plus rename.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::neural::{AdamState, ComparatorModel, InputNorm, ModelConfig};
use crate::plane::Fingerprint;

pub const FINGERPRINT_MAGIC: &[u8; 4] = b"PRNF";
pub const MODEL_MAGIC: &[u8; 4] = b"PRNM";
pub const FORMAT_VERSION: u32 = 1;

/// Writes `bytes` to `path` via a sibling temp file and an atomic rename.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format(format!(
                "truncated file: {what} needs {n} bytes, {} left",
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::Format(format!("{what} length overflows")))?;
        Ok(self
            .take(bytes, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn header(&mut self, magic: &[u8; 4], kind: &'static str) -> Result<()> {
        let found = self.take(4, "magic")?;
        if found != magic {
            return Err(Error::Format(format!(
                "bad magic {found:?}, expected {:?}",
                std::str::from_utf8(magic).unwrap_or("?")
            )));
        }
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                kind,
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

fn dim_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

pub fn encode_fingerprints(set: &[Fingerprint]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(FINGERPRINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim_u32(set.len(), "count")?.to_le_bytes());
    for fp in set {
        let id = fp.sensor_id().as_bytes();
        out.extend_from_slice(&dim_u32(id.len(), "id length")?.to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&dim_u32(fp.height(), "height")?.to_le_bytes());
        out.extend_from_slice(&dim_u32(fp.width(), "width")?.to_le_bytes());
        out.extend_from_slice(&fp.n_images().to_le_bytes());
        out.push(u8::from(fp.wiener_applied()));
        let (rh, rw) = fp.resolution_tag();
        out.extend_from_slice(&dim_u32(rh, "resolution")?.to_le_bytes());
        out.extend_from_slice(&dim_u32(rw, "resolution")?.to_le_bytes());
        for v in fp.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_fingerprints(bytes: &[u8]) -> Result<Vec<Fingerprint>> {
    let mut r = Reader::new(bytes);
    r.header(FINGERPRINT_MAGIC, "fingerprint store")?;
    let count = r.u32("count")? as usize;
    // each entry needs at least 25 header bytes
    if count > r.remaining() / 25 {
        return Err(Error::Format(format!("count {count} exceeds file size")));
    }
    let mut set = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = r.u32("id length")? as usize;
        let id = std::str::from_utf8(r.take(id_len, "sensor id")?)
            .map_err(|_| Error::Format("sensor id is not UTF-8".into()))?
            .to_string();
        let h = r.u32("height")? as usize;
        let w = r.u32("width")? as usize;
        let n_images = r.u32("n_images")?;
        let wiener = match r.u8("wiener flag")? {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("bad wiener flag {other}"))),
        };
        let rh = r.u32("resolution")? as usize;
        let rw = r.u32("resolution")? as usize;
        let n = h
            .checked_mul(w)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("payload size overflows".into()))?;
        let payload = r.take(n, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let fp = Fingerprint::new(id, h, w, data, n_images, wiener, (rh, rw))
            .map_err(|e| Error::Format(e.to_string()))?;
        set.push(fp);
    }
    r.finish()?;
    Ok(set)
}

pub fn save_fingerprints(set: &[Fingerprint], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_fingerprints(set)?)
}

pub fn load_fingerprints(path: impl AsRef<Path>) -> Result<Vec<Fingerprint>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fingerprints(&bytes)
}

/// A comparator with optional optimizer state, training seed and config.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: ComparatorModel,
    pub optimizer: Option<AdamState>,
    pub seed: u64,
    /// JSON snapshot of the training configuration.
    pub config_snapshot: String,
}

impl ModelCheckpoint {
    /// Optimizer state needed to resume training.
    pub fn resume_state(&self) -> Result<&AdamState> {
        self.optimizer.as_ref().ok_or_else(|| {
            Error::Config("checkpoint has no optimizer state; it can only be used for inference".into())
        })
    }
}

pub fn encode_model(ckpt: &ModelCheckpoint) -> Result<Vec<u8>> {
    let cfg = ckpt.model.config();
    let params = ckpt.model.params();
    let mut out = Vec::with_capacity(64 + params.len() * 24 + ckpt.config_snapshot.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(match cfg.input_norm {
        InputNorm::None => 0,
        InputNorm::Rms => 1,
        InputNorm::LocalRms => 2,
    });
    out.extend_from_slice(&dim_u32(cfg.channels.len(), "layer count")?.to_le_bytes());
    for c in &cfg.channels {
        out.extend_from_slice(&dim_u32(*c, "channels")?.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    match &ckpt.optimizer {
        Some(st) => {
            if st.m.len() != params.len() || st.v.len() != params.len() {
                return Err(Error::Format("optimizer state does not match parameters".into()));
            }
            out.push(1);
            out.extend_from_slice(&st.step.to_le_bytes());
            for v in st.m.iter().chain(&st.v) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        None => out.push(0),
    }
    out.extend_from_slice(&ckpt.seed.to_le_bytes());
    let snap = ckpt.config_snapshot.as_bytes();
    out.extend_from_slice(&dim_u32(snap.len(), "config length")?.to_le_bytes());
    out.extend_from_slice(snap);
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelCheckpoint> {
    let mut r = Reader::new(bytes);
    r.header(MODEL_MAGIC, "model checkpoint")?;
    let input_norm = match r.u8("input norm")? {
        0 => InputNorm::None,
        1 => InputNorm::Rms,
        2 => InputNorm::LocalRms,
        other => return Err(Error::Format(format!("unknown input norm {other}"))),
    };
    let n_layers = r.u32("layer count")? as usize;
    if n_layers > r.remaining() / 4 {
        return Err(Error::Format(format!("layer count {n_layers} exceeds file size")));
    }
    let channels = (0..n_layers)
        .map(|_| r.u32("channels").map(|c| c as usize))
        .collect::<Result<Vec<_>>>()?;
    let config = ModelConfig {
        channels,
        input_norm,
    };
    config.validate().map_err(|e| Error::Format(e.to_string()))?;
    let expected = config.param_count();
    let count = r.u64("parameter count")?;
    if count != expected as u64 {
        return Err(Error::Format(format!(
            "descriptor implies {expected} parameters, header says {count}"
        )));
    }
    let params = r.f64s(expected, "parameters")?;
    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let step = r.u64("optimizer step")?;
            let m = r.f64s(expected, "first moments")?;
            let v = r.f64s(expected, "second moments")?;
            Some(AdamState { step, m, v })
        }
        other => return Err(Error::Format(format!("bad optimizer flag {other}"))),
    };
    let seed = r.u64("seed")?;
    let len = r.u32("config length")? as usize;
    let config_snapshot = std::str::from_utf8(r.take(len, "config snapshot")?)
        .map_err(|_| Error::Format("config snapshot is not UTF-8".into()))?
        .to_string();
    r.finish()?;
    let model = ComparatorModel::from_params(config, params)?;
    Ok(ModelCheckpoint {
        model,
        optimizer,
        seed,
        config_snapshot,
    })
}

pub fn save_model(ckpt: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_model(ckpt)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    manifest.validate()?;
    write_atomic(path, manifest.to_json()?.as_bytes())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    DatasetManifest::load(path)
}
