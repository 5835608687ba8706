use std::path::PathBuf;

use numpy::ndarray::Array2;
use numpy::{IntoPyArray, PyArray2, PyReadonlyArray2};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use prnu_forge::eval::{run_benchmark as run_bench, AucMode, Scorer};
use prnu_forge::neural::InputNorm;
use prnu_forge::{
    ComparatorModel, DatasetManifest, DenoiserConfig, DenoiserKind, Error, Fingerprint, ImagePlane,
    ModelCheckpoint, PipelineConfig, ResidualPlane, ResolutionSpec, ScoreMode, SimConfig,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Image { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn plane(a: &PyReadonlyArray2<'_, f32>) -> PyResult<ImagePlane> {
    let v = a.as_array();
    let (h, w) = v.dim();
    ImagePlane::new(h, w, v.iter().copied().collect()).map_err(to_py)
}

fn residual_plane(a: &PyReadonlyArray2<'_, f32>, id: &str) -> PyResult<ResidualPlane> {
    let v = a.as_array();
    let (h, w) = v.dim();
    ResidualPlane::new(h, w, v.iter().copied().collect(), id).map_err(to_py)
}

fn array<'py>(py: Python<'py>, (h, w): (usize, usize), data: Vec<f32>) -> Bound<'py, PyArray2<f32>> {
    Array2::from_shape_vec((h, w), data)
        .expect("plane shape")
        .into_pyarray(py)
}

fn parse_enum<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} {s:?}")))
}

#[pyclass(name = "Fingerprint", module = "_prnu_forge", frozen, from_py_object)]
#[derive(Clone)]
struct PyFingerprint {
    inner: Fingerprint,
}

#[pymethods]
impl PyFingerprint {
    #[getter]
    fn sensor_id(&self) -> &str {
        self.inner.sensor_id()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.dims()
    }

    #[getter]
    fn n_images(&self) -> u32 {
        self.inner.n_images()
    }

    #[getter]
    fn wiener_applied(&self) -> bool {
        self.inner.wiener_applied()
    }

    fn to_numpy<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f32>> {
        array(py, self.inner.dims(), self.inner.data().to_vec())
    }

    fn __repr__(&self) -> String {
        let (h, w) = self.inner.dims();
        format!(
            "Fingerprint(sensor_id={:?}, shape=({h}, {w}), n_images={})",
            self.inner.sensor_id(),
            self.inner.n_images()
        )
    }
}

/// Hadamard-product comparator network.
#[pyclass(name = "Comparator", module = "_prnu_forge", frozen)]
struct PyComparator {
    inner: ComparatorModel,
}

#[pymethods]
impl PyComparator {
    #[new]
    #[pyo3(signature = (channels = vec![8, 16, 32, 64], seed = 0, input_norm = "rms"))]
    fn new(channels: Vec<usize>, seed: u64, input_norm: &str) -> PyResult<Self> {
        let input_norm: InputNorm = parse_enum("input norm", input_norm)?;
        let config = prnu_forge::ModelConfig {
            channels,
            input_norm,
        };
        Ok(Self {
            inner: ComparatorModel::new(config, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = prnu_forge::load_model(path).map_err(to_py)?;
        Ok(Self { inner: ckpt.model })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let ckpt = ModelCheckpoint {
            model: self.inner.clone(),
            optimizer: None,
            seed: 0,
            config_snapshot: "{}".into(),
        };
        prnu_forge::save_model(&ckpt, path).map_err(to_py)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Probability that `plane` (a Hadamard product) is a matching pair.
    fn forward(&self, plane_: PyReadonlyArray2<'_, f32>) -> PyResult<f64> {
        self.inner.forward(&plane(&plane_)?).map_err(to_py)
    }
}

/// Noise residual `I - D(I)` of a single-channel image.
#[pyfunction]
#[pyo3(signature = (image, denoiser = "wavelet_wiener"))]
fn residual<'py>(
    py: Python<'py>,
    image: PyReadonlyArray2<'py, f32>,
    denoiser: &str,
) -> PyResult<Bound<'py, PyArray2<f32>>> {
    let img = plane(&image)?;
    let cfg = DenoiserConfig {
        kind: parse_enum::<DenoiserKind>("denoiser", denoiser)?,
        ..Default::default()
    };
    let d = cfg.build().map_err(to_py)?;
    let r = prnu_forge::extract_residual(&img, d.as_ref(), "").map_err(to_py)?;
    Ok(array(py, r.dims(), r.data().to_vec()))
}

#[pyfunction]
#[pyo3(signature = (residuals, sensor_id, wiener = true, window = 3))]
fn estimate_fingerprint(
    residuals: Vec<PyReadonlyArray2<'_, f32>>,
    sensor_id: &str,
    wiener: bool,
    window: usize,
) -> PyResult<PyFingerprint> {
    let planes = residuals
        .iter()
        .enumerate()
        .map(|(i, a)| residual_plane(a, &format!("{i:06}")))
        .collect::<PyResult<Vec<_>>>()?;
    let mut fp = prnu_forge::estimate_fingerprint(&planes, sensor_id).map_err(to_py)?;
    if wiener {
        fp = prnu_forge::wiener_postfilter(&fp, window, None).map_err(to_py)?;
    }
    Ok(PyFingerprint { inner: fp })
}

/// Returns `(value, degenerate)`.
#[pyfunction]
fn ncc(a: PyReadonlyArray2<'_, f32>, b: PyReadonlyArray2<'_, f32>) -> PyResult<(f64, bool)> {
    let (a, b) = (plane(&a)?, plane(&b)?);
    if a.dims() != b.dims() {
        return Err(to_py(Error::DimensionMismatch {
            expected: a.dims(),
            actual: b.dims(),
        }));
    }
    let s = prnu_forge::matcher::ncc_slices(a.data(), b.data());
    Ok((s.value, s.degenerate))
}

#[pyfunction]
fn hadamard<'py>(
    py: Python<'py>,
    a: PyReadonlyArray2<'py, f32>,
    b: PyReadonlyArray2<'py, f32>,
) -> PyResult<Bound<'py, PyArray2<f32>>> {
    let (a, b) = (plane(&a)?, plane(&b)?);
    let (h, w) = a.dims();
    let fp = Fingerprint::new("", h, w, a.into_data(), 1, false, (h, w)).map_err(to_py)?;
    let res = ResidualPlane::new(b.height(), b.width(), b.into_data(), "").map_err(to_py)?;
    let out = prnu_forge::hadamard(&fp, &res).map_err(to_py)?;
    Ok(array(py, out.dims(), out.into_data()))
}

#[pyfunction]
fn resolution_weights(levels: Vec<(usize, usize)>) -> PyResult<Vec<f64>> {
    let spec = ResolutionSpec::new(levels).map_err(to_py)?;
    Ok(prnu_forge::resolution_weights(&spec))
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    prnu_forge::roc_auc(&scores, &labels).map_err(to_py)
}

#[pyfunction]
fn eer(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    prnu_forge::eer(&scores, &labels).map_err(to_py)
}

#[pyfunction]
fn topk_accuracy(rankings: Vec<Vec<String>>, truth: Vec<String>, k: usize) -> PyResult<f64> {
    prnu_forge::topk_accuracy(&rankings, &truth, k).map_err(to_py)
}

#[pyfunction]
fn bce_pair_loss(p_pos: f64, p_neg: f64) -> f64 {
    prnu_forge::neural::bce_pair_loss(p_pos, p_neg)
}

#[pyfunction]
fn save_fingerprints(fingerprints: Vec<PyFingerprint>, path: PathBuf) -> PyResult<()> {
    let set: Vec<Fingerprint> = fingerprints.into_iter().map(|f| f.inner).collect();
    prnu_forge::save_fingerprints(&set, path).map_err(to_py)
}

#[pyfunction]
fn load_fingerprints(path: PathBuf) -> PyResult<Vec<PyFingerprint>> {
    Ok(prnu_forge::load_fingerprints(path)
        .map_err(to_py)?
        .into_iter()
        .map(|inner| PyFingerprint { inner })
        .collect())
}

/// Generates a synthetic dataset under `out`; returns the manifest JSON.
/// `config` is a JSON object overriding simulator defaults.
#[pyfunction]
#[pyo3(signature = (out, config = None))]
fn simulate(py: Python<'_>, out: PathBuf, config: Option<&str>) -> PyResult<String> {
    let cfg: SimConfig = match config {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => SimConfig::default(),
    };
    let manifest = py
        .detach(|| prnu_forge::gen_dataset(&cfg, &out))
        .map_err(to_py)?;
    manifest.to_json().map_err(to_py)
}

/// Runs the identification benchmark on a manifest; returns the report JSON.
#[pyfunction]
#[pyo3(signature = (manifest, mode = "ncc", model = None, resolutions = None))]
fn run_benchmark(
    py: Python<'_>,
    manifest: PathBuf,
    mode: &str,
    model: Option<PathBuf>,
    resolutions: Option<&str>,
) -> PyResult<String> {
    let mode: ScoreMode = parse_enum("mode", mode)?;
    let mut cfg = PipelineConfig::default();
    if let Some(r) = resolutions {
        cfg.resolutions = ResolutionSpec::parse(r).map_err(to_py)?;
    }
    let ckpt = match model {
        Some(p) => Some(prnu_forge::load_model(p).map_err(to_py)?),
        None => None,
    };
    let m = DatasetManifest::load(&manifest).map_err(to_py)?;
    let root = manifest.parent().map(PathBuf::from).unwrap_or_default();
    let run = py
        .detach(|| {
            let scorer = Scorer::Mode {
                mode,
                model: ckpt.as_ref().map(|c| &c.model),
            };
            run_bench(&m, &root, &cfg, &scorer, AucMode::AllPairs, None)
        })
        .map_err(to_py)?;
    run.report.to_json().map_err(to_py)
}

#[pymodule]
pub fn _prnu_forge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFingerprint>()?;
    m.add_class::<PyComparator>()?;
    m.add_function(wrap_pyfunction!(residual, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_fingerprint, m)?)?;
    m.add_function(wrap_pyfunction!(ncc, m)?)?;
    m.add_function(wrap_pyfunction!(hadamard, m)?)?;
    m.add_function(wrap_pyfunction!(resolution_weights, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(eer, m)?)?;
    m.add_function(wrap_pyfunction!(topk_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(bce_pair_loss, m)?)?;
    m.add_function(wrap_pyfunction!(save_fingerprints, m)?)?;
    m.add_function(wrap_pyfunction!(load_fingerprints, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
