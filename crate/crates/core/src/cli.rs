//! Command-line front end: `simulate`, `enroll`, `identify`, `train`, `eval`.
//!
//! Every command resolves a [`RunConfig`] (defaults, then `--config`, then
//! flags) and writes it to `resolved_config.json` in its output directory.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::denoise::DenoiserKind;
use crate::error::{Error, Result};
use crate::eval::{run_with_gallery, AucMode, Scorer};
use crate::manifest::DatasetManifest;
use crate::matcher::{rank_devices, write_scores_csv, ScoreMode};
use crate::neural::{train, train_from, write_loss_csv, TrainConfig};
use crate::pipeline::{enroll_manifest, training_set, Gallery, Pipeline, PipelineConfig};
use crate::plane::{ImagePlane, ResolutionSpec};
use crate::simulator::{gen_dataset, SimConfig};
use crate::store::{load_fingerprints, load_model, save_fingerprints, save_model, write_atomic, ModelCheckpoint};

pub const FINGERPRINT_FILE: &str = "fingerprints.prnf";
pub const MODEL_FILE: &str = "model.prnm";
pub const LOSS_FILE: &str = "loss.csv";
pub const RANKING_FILE: &str = "ranking.csv";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

/// Everything a command can be configured with.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub mode: ScoreMode,
    pub auc_mode: AucMode,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "prnu-forge", version, about = "PRNU sensor fingerprinting and camera identification")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run config; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = "PRNU_FORGE_THREADS")]
    pub threads: Option<usize>,
    /// Comma separated levels, e.g. `192x192,256x256`.
    #[arg(long, global = true)]
    pub resolutions: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ScoreMode>,
    /// Comparator checkpoint for neural/joint scoring.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its manifest.
    Simulate(SimulateArgs),
    /// Estimate per-level fingerprints of the evaluation devices.
    Enroll(EnrollArgs),
    /// Rank enrolled devices for query images.
    Identify(IdentifyArgs),
    /// Train the comparator on the pretrain devices.
    Train(TrainArgs),
    /// Run the identification benchmark.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sensors: Option<usize>,
    /// `HxW`.
    #[arg(long)]
    pub size: Option<String>,
    #[arg(long)]
    pub images_per_view: Option<usize>,
    #[arg(long)]
    pub n_refs: Option<usize>,
    #[arg(long)]
    pub strength: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EnrollArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub denoiser: Option<DenoiserArg>,
    /// Skip the Wiener post-filter.
    #[arg(long)]
    pub no_wiener: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum DenoiserArg {
    WaveletWiener,
    Gaussian,
    Identity,
}

impl From<DenoiserArg> for DenoiserKind {
    fn from(d: DenoiserArg) -> Self {
        match d {
            DenoiserArg::WaveletWiener => DenoiserKind::WaveletWiener,
            DenoiserArg::Gaussian => DenoiserKind::Gaussian,
            DenoiserArg::Identity => DenoiserKind::Identity,
        }
    }
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// A PNG file or a directory of PNGs.
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub crop_size: Option<usize>,
    /// Continue from a checkpoint that carries optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Enrolled store; without it the devices are enrolled on the fly.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub auc_mode: Option<AucMode>,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code: 0 ok, 1 runtime failure, 2 usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Simulate(a) => cmd_simulate(&cfg, a),
        Command::Enroll(a) => cmd_enroll(&cfg, a),
        Command::Identify(a) => cmd_identify(&cfg, &cli.common, a),
        Command::Train(a) => cmd_train(&cfg, a),
        Command::Eval(a) => cmd_eval(&cfg, &cli.common, a),
    })
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let spec = ResolutionSpec::parse(s)?;
    match spec.levels() {
        [one] => Ok(*one),
        _ => Err(Error::Config(format!("expected one HxW size, got {s:?}"))),
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = c.threads {
        cfg.threads = Some(t);
    }
    if let Some(r) = &c.resolutions {
        cfg.pipeline.resolutions = ResolutionSpec::parse(r)?;
    }
    if let Some(m) = c.mode {
        cfg.mode = m;
    }
    match &cli.command {
        Command::Simulate(a) => {
            if let Some(s) = c.seed {
                cfg.sim.rng_seed = s;
            }
            if let Some(n) = a.sensors {
                cfg.sim.n_sensors = n;
            }
            if let Some(s) = &a.size {
                cfg.sim.image_size = parse_size(s)?;
            }
            if let Some(n) = a.images_per_view {
                cfg.sim.images_per_view = n;
            }
            if let Some(n) = a.n_refs {
                cfg.sim.n_refs = n;
            }
            if let Some(s) = a.strength {
                cfg.sim.fingerprint_strength = s;
            }
            cfg.sim.validate()?;
        }
        Command::Enroll(a) => {
            if let Some(d) = a.denoiser {
                cfg.pipeline.denoiser.kind = d.into();
            }
            if a.no_wiener {
                cfg.pipeline.wiener = false;
            }
        }
        Command::Train(a) => {
            if let Some(s) = c.seed {
                cfg.train.seed = s;
            }
            if let Some(n) = a.epochs {
                cfg.train.epochs = n;
            }
            if let Some(lr) = a.lr {
                cfg.train.learning_rate = lr;
            }
            if let Some(b) = a.batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(s) = a.steps_per_epoch {
                cfg.train.steps_per_epoch = Some(s);
            }
            if let Some(s) = a.crop_size {
                cfg.train.crop_size = s;
            }
            cfg.train.validate()?;
        }
        Command::Eval(a) => {
            if let Some(m) = a.auc_mode {
                cfg.auc_mode = m;
            }
        }
        Command::Identify(_) => {}
    }
    cfg.pipeline.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct Snapshot<'a> {
    command: &'a str,
    inputs: Vec<(&'a str, String)>,
    config: &'a RunConfig,
}

fn write_snapshot(dir: &Path, command: &str, inputs: Vec<(&str, &Path)>, cfg: &RunConfig) -> Result<()> {
    let snap = Snapshot {
        command,
        inputs: inputs
            .into_iter()
            .map(|(k, p)| (k, p.display().to_string()))
            .collect(),
        config: cfg,
    };
    let mut s = serde_json::to_string_pretty(&snap)?;
    s.push('\n');
    write_atomic(dir.join(RESOLVED_CONFIG_FILE), s.as_bytes())
}

fn manifest_root(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn load_scoring_model(mode: ScoreMode, path: Option<&Path>) -> Result<Option<ModelCheckpoint>> {
    match (mode.needs_model(), path) {
        (true, None) => Err(Error::Config(format!(
            "--mode {} requires --model",
            mode.as_str()
        ))),
        (true, Some(p)) => Ok(Some(load_model(p)?)),
        (false, _) => Ok(None),
    }
}

fn cmd_simulate(cfg: &RunConfig, a: &SimulateArgs) -> Result<()> {
    let manifest = gen_dataset(&cfg.sim, &a.out)?;
    write_snapshot(&a.out, "simulate", vec![], cfg)?;
    eprintln!(
        "simulated {} devices, {} images into {}",
        manifest.devices.len(),
        manifest.records.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_enroll(cfg: &RunConfig, a: &EnrollArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let pipeline = Pipeline::new(cfg.pipeline.clone())?;
    let gallery = enroll_manifest(&manifest, &manifest_root(&a.manifest), &pipeline, None)?;
    let store = gallery.to_store();
    save_fingerprints(&store, a.out.join(FINGERPRINT_FILE))?;
    write_snapshot(&a.out, "enroll", vec![("manifest", &a.manifest)], cfg)?;
    eprintln!(
        "enrolled {} devices at {} levels ({} fingerprints)",
        gallery.len(),
        gallery.spec().len(),
        store.len()
    );
    Ok(())
}

fn query_paths(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let p = entry.map_err(|e| Error::io(path, e))?.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::EmptyInput("query directory holds no PNG images"));
    }
    Ok(out)
}

fn cmd_identify(cfg: &RunConfig, c: &Common, a: &IdentifyArgs) -> Result<()> {
    let ckpt = load_scoring_model(cfg.mode, c.model.as_deref())?;
    let gallery = Gallery::from_store(load_fingerprints(&a.store)?)?;
    let mut pcfg = cfg.pipeline.clone();
    pcfg.resolutions = gallery.spec().clone();
    let pipeline = Pipeline::new(pcfg)?;
    let fps = gallery.fingerprints();
    let mut all = Vec::new();
    for path in query_paths(&a.query)? {
        let img = ImagePlane::load_png(&path)?;
        let id = path.display().to_string();
        let res = pipeline.residuals(&img, &id)?;
        let ranked = rank_devices(&fps, &res, gallery.spec(), cfg.mode, ckpt.as_ref().map(|k| &k.model))?;
        all.extend(ranked);
    }
    let mut csv = Vec::new();
    write_scores_csv(&all, &mut csv)?;
    std::io::stdout()
        .write_all(&csv)
        .map_err(|e| Error::io("<stdout>", e))?;
    if let Some(out) = &a.out {
        write_atomic(out.join(RANKING_FILE), &csv)?;
        write_snapshot(out, "identify", vec![("store", &a.store), ("query", &a.query)], cfg)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CheckpointConfig<'a> {
    train: &'a TrainConfig,
    pipeline: &'a PipelineConfig,
}

fn cmd_train(cfg: &RunConfig, a: &TrainArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let pipeline = Pipeline::new(cfg.pipeline.clone())?;
    let set = training_set(&manifest, &manifest_root(&a.manifest), &pipeline, None)?;
    let mut tcfg = cfg.train.clone();
    let outcome = match &a.resume {
        Some(p) => {
            let ckpt = load_model(p)?;
            let state = ckpt.resume_state()?.clone();
            tcfg.model = ckpt.model.config().clone();
            train_from(&set, &tcfg, ckpt.model, state)?
        }
        None => train(&set, &tcfg)?,
    };
    let snapshot = serde_json::to_string(&CheckpointConfig {
        train: &tcfg,
        pipeline: &cfg.pipeline,
    })?;
    let ckpt = ModelCheckpoint {
        model: outcome.model.clone(),
        optimizer: Some(outcome.optimizer.clone()),
        seed: tcfg.seed,
        config_snapshot: snapshot,
    };
    save_model(&ckpt, a.out.join(MODEL_FILE))?;
    let mut loss = Vec::new();
    write_loss_csv(&outcome.trace, &mut loss).map_err(|e| Error::io(&a.out, e))?;
    write_atomic(a.out.join(LOSS_FILE), &loss)?;
    let mut inputs = vec![("manifest", a.manifest.as_path())];
    if let Some(p) = &a.resume {
        inputs.push(("resume", p.as_path()));
    }
    write_snapshot(&a.out, "train", inputs, cfg)?;
    let means = outcome.epoch_means();
    eprintln!(
        "trained {} steps; epoch loss {} -> {}",
        outcome.trace.len(),
        means.first().copied().unwrap_or(f64::NAN),
        means.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, c: &Common, a: &EvalArgs) -> Result<()> {
    let ckpt = load_scoring_model(cfg.mode, c.model.as_deref())?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let root = manifest_root(&a.manifest);
    let mut pcfg = cfg.pipeline.clone();
    let gallery = match &a.store {
        Some(p) => {
            let g = Gallery::from_store(load_fingerprints(p)?)?;
            if c.resolutions.is_none() {
                pcfg.resolutions = g.spec().clone();
            }
            Some(g)
        }
        None => None,
    };
    let pipeline = Pipeline::new(pcfg)?;
    let gallery = match gallery {
        Some(g) => g,
        None => enroll_manifest(&manifest, &root, &pipeline, None)?,
    };
    let scorer = Scorer::Mode {
        mode: cfg.mode,
        model: ckpt.as_ref().map(|k| &k.model),
    };
    let run = run_with_gallery(&manifest, &root, &pipeline, &gallery, &scorer, cfg.auc_mode, None)?;
    run.save(&a.out)?;
    let mut inputs = vec![("manifest", a.manifest.as_path())];
    if let Some(p) = &a.store {
        inputs.push(("store", p.as_path()));
    }
    if let Some(p) = &c.model {
        inputs.push(("model", p.as_path()));
    }
    write_snapshot(&a.out, "eval", inputs, cfg)?;
    let r = &run.report;
    eprintln!(
        "{}: auc {:.4} eer {:.4} top1 {:.2}% top5 {:.2}% over {} queries",
        r.protocol.scorer, r.auc, r.eer, r.top1, r.top5, r.n_queries
    );
    Ok(())
}
