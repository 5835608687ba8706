//! PRNU sensor fingerprinting: noise residuals, fingerprint estimation,
//! NCC and neural (Hadamard-product) matching, multi-resolution fusion,
//! a synthetic sensor simulator and an identification benchmark.

pub mod cli;
pub mod denoise;
pub mod error;
pub mod eval;
pub mod fmt;
mod local;
pub mod manifest;
pub mod matcher;
pub mod neural;
pub mod pipeline;
pub mod plane;
pub mod resample;
pub mod signal;
pub mod simulator;
pub mod store;

pub use denoise::{Denoiser, DenoiserConfig, DenoiserKind};
pub use error::{Error, Result};
pub use eval::{eer, roc_auc, run_benchmark, topk_accuracy, AucMode, EvalReport, Scorer};
pub use manifest::{DatasetManifest, Role};
pub use matcher::{
    hadamard, joint_score, multires_score, ncc, rank_devices, resolution_weights, ScoreMode,
    ScoreRecord,
};
pub use neural::{ComparatorModel, ModelConfig, TrainConfig};
pub use pipeline::{Gallery, Pipeline, PipelineConfig};
pub use plane::{Fingerprint, ImagePlane, ResidualPlane, ResolutionSpec};
pub use signal::{estimate_fingerprint, extract_residual, wiener_postfilter};
pub use simulator::{gen_dataset, SimConfig};
pub use store::{load_fingerprints, load_model, save_fingerprints, save_model, ModelCheckpoint};
