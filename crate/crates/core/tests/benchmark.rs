use std::path::Path;

use prnu_forge::eval::{run_benchmark, AucMode, Scorer};
use prnu_forge::matcher::ScoreMode;
use prnu_forge::neural::ModelConfig;
use prnu_forge::{
    gen_dataset, ComparatorModel, DatasetManifest, Fingerprint, PipelineConfig, ResidualPlane,
    ResolutionSpec, Result, SimConfig,
};

fn dataset(dir: &Path, n_sensors: usize) -> DatasetManifest {
    let cfg = SimConfig {
        n_sensors,
        image_size: (96, 96),
        images_per_view: 7,
        n_refs: 5,
        rng_seed: 3,
        ..SimConfig::default()
    };
    gen_dataset(&cfg, dir).unwrap()
}

fn pipeline() -> PipelineConfig {
    PipelineConfig {
        resolutions: ResolutionSpec::parse("64x64,96x96").unwrap(),
        ..PipelineConfig::default()
    }
}

/// Reads the true device back out of the query path `<sensor>/<view>/<n>.png`.
fn truth(query: &[ResidualPlane]) -> &str {
    query[0].source_id().split('/').next().unwrap()
}

#[test]
fn oracle_scorer_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 4);
    assert_eq!(m.split.eval_devices.len(), 2);
    let f = |fps: &[Fingerprint], q: &[ResidualPlane]| -> Result<f64> {
        Ok(if fps[0].sensor_id() == truth(q) { 1.0 } else { 0.0 })
    };
    let scorer = Scorer::Custom {
        name: "oracle".into(),
        score: &f,
    };
    let r = run_benchmark(&m, dir.path(), &pipeline(), &scorer, AucMode::AllPairs, None)
        .unwrap()
        .report;
    assert_eq!(r.auc, 1.0);
    assert_eq!(r.eer, 0.0);
    assert_eq!(r.top1, 100.0);
    assert_eq!(r.protocol.n_refs, 5);
}

#[test]
fn constant_scorer_is_chance() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 8);
    let d = m.split.eval_devices.len() as f64;
    let f = |_: &[Fingerprint], _: &[ResidualPlane]| -> Result<f64> { Ok(0.25) };
    let scorer = Scorer::Custom {
        name: "constant".into(),
        score: &f,
    };
    let r = run_benchmark(&m, dir.path(), &pipeline(), &scorer, AucMode::AllPairs, None)
        .unwrap()
        .report;
    assert_eq!(r.auc, 0.5);
    // ties always rank the smallest sensor id first
    assert!((r.top1 - 100.0 / d).abs() < 1e-9, "{}", r.top1);
}

#[test]
fn joint_report_has_component_scores() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 4);
    let model = ComparatorModel::new(ModelConfig::default(), 1).unwrap();
    let scorer = Scorer::Mode {
        mode: ScoreMode::Joint,
        model: Some(&model),
    };
    let run = run_benchmark(&m, dir.path(), &pipeline(), &scorer, AucMode::AllPairs, None).unwrap();
    let keys: Vec<&str> = run.report.sub_scores.keys().map(String::as_str).collect();
    assert_eq!(keys, ["ncc", "neural"]);
    assert_eq!(run.report.protocol.scorer, "joint");

    let out = tempfile::tempdir().unwrap();
    run.save(out.path()).unwrap();
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["protocol"]["n_refs"], 5);
    assert!(json["sub_scores"]["neural"]["auc"].is_number());
    assert!(out.path().join("roc.csv").exists());
    assert!(out.path().join("scores.csv").exists());
}

#[test]
fn ncc_report_is_reproducible() {
    let render = || {
        let dir = tempfile::tempdir().unwrap();
        let m = dataset(dir.path(), 4);
        let scorer = Scorer::Mode {
            mode: ScoreMode::Ncc,
            model: None,
        };
        let run = run_benchmark(&m, dir.path(), &pipeline(), &scorer, AucMode::AllPairs, None).unwrap();
        let out = tempfile::tempdir().unwrap();
        run.save(out.path()).unwrap();
        ["report.json", "roc.csv", "scores.csv"].map(|f| std::fs::read(out.path().join(f)).unwrap())
    };
    assert_eq!(render(), render());
}

#[test]
fn single_eval_device_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 2);
    let scorer = Scorer::Mode {
        mode: ScoreMode::Ncc,
        model: None,
    };
    assert!(run_benchmark(&m, dir.path(), &pipeline(), &scorer, AucMode::AllPairs, None).is_err());
}
