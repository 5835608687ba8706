//! Identification metrics and the benchmark runner.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::{round_sig9, sig9};
use crate::manifest::{DatasetManifest, ImageRecord, Role};
use crate::matcher::{rank_devices, sort_records, ScoreMode, ScoreRecord};
use crate::neural::ComparatorModel;
use crate::pipeline::{enroll_manifest, load_record, AccessLog, Gallery, Pipeline, PipelineConfig, Purpose};
use crate::plane::{Fingerprint, ResidualPlane};

pub const REPORT_FILE: &str = "report.json";
pub const ROC_FILE: &str = "roc.csv";
pub const SCORES_FILE: &str = "scores.csv";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are accepted; the first point uses `+inf`.
    pub threshold: f64,
}

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite score {s}")));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument(
            "need at least one positive and one negative label".into(),
        ));
    }
    Ok((pos, neg))
}

/// ROC curve from the highest threshold down; tied scores form one step.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: t,
        });
    }
    Ok(points)
}

/// Mann-Whitney AUC: `P(pos > neg) + P(pos = neg) / 2`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    // sum of 1-based mid-ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        let p = order[i..j].iter().filter(|k| labels[**k]).count();
        rank_sum += mid * p as f64;
        i = j;
    }
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Equal error rate, interpolated linearly between the ROC points that
/// bracket `FAR = FRR`.
pub fn eer(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pts = roc_points(scores, labels)?;
    let mut prev = (pts[0].fpr, 1.0 - pts[0].tpr);
    for p in &pts[1..] {
        let cur = (p.fpr, 1.0 - p.tpr);
        if cur.0 >= cur.1 {
            // d = far - frr goes from negative at prev to >= 0 at cur
            let d0 = prev.0 - prev.1;
            let d1 = cur.0 - cur.1;
            let t = if d1 == d0 { 0.0 } else { -d0 / (d1 - d0) };
            return Ok(prev.0 + t * (cur.0 - prev.0));
        }
        prev = cur;
    }
    unreachable!("the last ROC point has far = 1 >= frr = 0")
}

/// Percentage of queries whose true sensor is within the first `k` ranks.
pub fn topk_accuracy(rankings: &[Vec<String>], truth: &[String], k: usize) -> Result<f64> {
    if rankings.len() != truth.len() {
        return Err(Error::InvalidArgument("rankings and truth differ in length".into()));
    }
    if rankings.is_empty() {
        return Err(Error::EmptyInput("no queries"));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if let Some(r) = rankings.iter().find(|r| r.len() < k) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds a gallery of {}",
            r.len()
        )));
    }
    let hits = rankings
        .iter()
        .zip(truth)
        .filter(|(r, t)| r[..k].contains(t))
        .count();
    Ok(100.0 * hits as f64 / rankings.len() as f64)
}

/// How (query, device) scores are pooled for AUC and EER.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AucMode {
    /// One pooled ROC over every pair.
    #[default]
    AllPairs,
    /// Mean of the per-query AUC/EER.
    PerQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub eer: f64,
    pub top1: f64,
    pub top5: f64,
}

/// Scores of one query against every gallery device.
#[derive(Debug, Clone)]
pub struct QueryScores {
    pub query_id: String,
    pub truth: String,
    pub scores: Vec<(String, f64)>,
}

fn ranked(q: &QueryScores) -> Vec<String> {
    let mut s = q.scores.clone();
    s.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    s.into_iter().map(|(id, _)| id).collect()
}

fn flatten(queries: &[QueryScores]) -> (Vec<f64>, Vec<bool>) {
    queries
        .iter()
        .flat_map(|q| q.scores.iter().map(move |(id, s)| (*s, *id == q.truth)))
        .unzip()
}

/// AUC, EER and top-1/top-5 over a score matrix. `top5` uses
/// `min(5, gallery size)` ranks.
pub fn compute_metrics(queries: &[QueryScores], mode: AucMode) -> Result<Metrics> {
    let gallery = queries
        .iter()
        .map(|q| q.scores.len())
        .min()
        .ok_or(Error::EmptyInput("no queries"))?;
    let (auc, eer_v) = match mode {
        AucMode::AllPairs => {
            let (s, l) = flatten(queries);
            (roc_auc(&s, &l)?, eer(&s, &l)?)
        }
        AucMode::PerQuery => {
            let (mut a, mut e) = (0.0, 0.0);
            for q in queries {
                let (s, l) = flatten(std::slice::from_ref(q));
                a += roc_auc(&s, &l)?;
                e += eer(&s, &l)?;
            }
            let n = queries.len() as f64;
            (a / n, e / n)
        }
    };
    let rankings: Vec<Vec<String>> = queries.iter().map(ranked).collect();
    let truth: Vec<String> = queries.iter().map(|q| q.truth.clone()).collect();
    Ok(Metrics {
        auc,
        eer: eer_v,
        top1: topk_accuracy(&rankings, &truth, 1)?,
        top5: topk_accuracy(&rankings, &truth, gallery.min(5))?,
    })
}

/// AUC of each device's column: its scores against every query, labelled
/// by whether the query came from that device.
pub fn per_device_auc(queries: &[QueryScores]) -> BTreeMap<String, f64> {
    let mut cols: BTreeMap<&str, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for q in queries {
        for (id, s) in &q.scores {
            let c = cols.entry(id.as_str()).or_default();
            c.0.push(*s);
            c.1.push(*id == q.truth);
        }
    }
    cols.into_iter()
        .filter_map(|(id, (s, l))| roc_auc(&s, &l).ok().map(|a| (id.to_string(), a)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub n_refs: usize,
    pub resolutions: Vec<(usize, usize)>,
    pub scorer: String,
    pub auc_mode: AucMode,
    pub wiener: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub auc: f64,
    pub eer: f64,
    pub top1: f64,
    pub top5: f64,
    pub n_queries: usize,
    pub n_devices: usize,
    pub protocol: Protocol,
    /// Metrics of each component score (joint mode only).
    pub sub_scores: BTreeMap<String, Metrics>,
    pub per_device_auc: BTreeMap<String, f64>,
    /// File holding the full score matrix.
    pub score_matrix: String,
    pub roc_points: Vec<RocPoint>,
}

fn round_floats(v: &mut serde_json::Value) {
    use serde_json::Value;
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig9(n.as_f64().expect("f64"));
            *v = serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number);
        }
        Value::Array(a) => a.iter_mut().for_each(round_floats),
        Value::Object(o) => o.values_mut().for_each(round_floats),
        _ => {}
    }
}

impl EvalReport {
    /// Pretty JSON, floats rounded to 9 significant digits; the infinite
    /// first ROC threshold becomes `null`.
    pub fn to_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        round_floats(&mut v);
        let mut s = serde_json::to_string_pretty(&v)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write_roc_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "fpr,tpr,threshold")?;
        for p in &self.roc_points {
            writeln!(out, "{},{},{}", sig9(p.fpr), sig9(p.tpr), sig9(p.threshold))?;
        }
        Ok(())
    }
}

/// How each (query, device) pair is scored.
pub enum Scorer<'a> {
    Mode {
        mode: ScoreMode,
        model: Option<&'a ComparatorModel>,
    },
    /// Any function of a device's fingerprints and the query's residuals.
    Custom {
        name: String,
        score: &'a (dyn Fn(&[Fingerprint], &[ResidualPlane]) -> Result<f64> + Sync),
    },
}

impl Scorer<'_> {
    pub fn name(&self) -> String {
        match self {
            Scorer::Mode { mode, .. } => mode.as_str().to_string(),
            Scorer::Custom { name, .. } => name.clone(),
        }
    }

    fn rank(&self, gallery: &Gallery, query: &[ResidualPlane]) -> Result<Vec<ScoreRecord>> {
        match self {
            Scorer::Mode { mode, model } => {
                rank_devices(&gallery.fingerprints(), query, gallery.spec(), *mode, *model)
            }
            Scorer::Custom { score, .. } => {
                let mut out = gallery
                    .devices()
                    .par_iter()
                    .map(|(id, fps)| {
                        Ok(ScoreRecord {
                            sensor_id: id.clone(),
                            query_id: query[0].source_id().to_string(),
                            ncc: None,
                            neural: None,
                            fused: score(fps, query)?,
                            per_resolution: Vec::new(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                sort_records(&mut out);
                Ok(out)
            }
        }
    }
}

/// Report plus the ranked score records of every query.
#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub report: EvalReport,
    pub records: Vec<Vec<ScoreRecord>>,
}

impl BenchmarkRun {
    pub fn write_scores_csv(&self, out: impl Write) -> Result<()> {
        crate::matcher::write_scores_csv(self.records.iter().flatten(), out)
    }

    /// Writes the report, ROC and score matrix into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        use crate::store::write_atomic;
        write_atomic(dir.join(REPORT_FILE), self.report.to_json()?.as_bytes())?;
        let mut roc = Vec::new();
        self.report.write_roc_csv(&mut roc).map_err(|e| Error::io(dir, e))?;
        write_atomic(dir.join(ROC_FILE), &roc)?;
        let mut scores = Vec::new();
        self.write_scores_csv(&mut scores)?;
        write_atomic(dir.join(SCORES_FILE), &scores)
    }
}

fn component(queries: &[QueryScores], records: &[Vec<ScoreRecord>], pick: fn(&ScoreRecord) -> Option<f64>) -> Option<Vec<QueryScores>> {
    queries
        .iter()
        .zip(records)
        .map(|(q, recs)| {
            Some(QueryScores {
                query_id: q.query_id.clone(),
                truth: q.truth.clone(),
                scores: recs
                    .iter()
                    .map(|r| pick(r).map(|s| (r.sensor_id.clone(), s)))
                    .collect::<Option<Vec<_>>>()?,
            })
        })
        .collect()
}

/// Enrolls the evaluation devices from their references, then scores every
/// view-2 test image of those devices against the whole gallery.
pub fn run_benchmark(
    manifest: &DatasetManifest,
    root: &Path,
    cfg: &PipelineConfig,
    scorer: &Scorer<'_>,
    auc_mode: AucMode,
    log: Option<&AccessLog>,
) -> Result<BenchmarkRun> {
    let pipeline = Pipeline::new(cfg.clone())?;
    let gallery = enroll_manifest(manifest, root, &pipeline, log)?;
    run_with_gallery(manifest, root, &pipeline, &gallery, scorer, auc_mode, log)
}

/// As [`run_benchmark`] with an already enrolled gallery.
pub fn run_with_gallery(
    manifest: &DatasetManifest,
    root: &Path,
    pipeline: &Pipeline,
    gallery: &Gallery,
    scorer: &Scorer<'_>,
    auc_mode: AucMode,
    log: Option<&AccessLog>,
) -> Result<BenchmarkRun> {
    manifest.validate()?;
    let eval = &manifest.split.eval_devices;
    if eval.len() < 2 {
        return Err(Error::Config(format!(
            "benchmark needs at least 2 evaluation devices, got {}",
            eval.len()
        )));
    }
    if gallery.sensor_ids() != eval.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Config(
            "gallery devices differ from the manifest's evaluation devices".into(),
        ));
    }
    if gallery.spec() != pipeline.spec() {
        return Err(Error::Config(format!(
            "gallery resolutions {} differ from pipeline resolutions {}",
            gallery.spec().to_arg(),
            pipeline.spec().to_arg()
        )));
    }
    let tests: Vec<&ImageRecord> = manifest
        .records
        .iter()
        .filter(|r| r.role == Role::Test && eval.contains(&r.sensor_id))
        .collect();
    if tests.is_empty() {
        return Err(Error::EmptyInput("no test images for the evaluation devices"));
    }
    let records = tests
        .par_iter()
        .map(|rec| {
            let img = load_record(root, rec, Purpose::Query, log)?;
            let res = pipeline.residuals(&img, &rec.image_path)?;
            scorer.rank(gallery, &res)
        })
        .collect::<Result<Vec<_>>>()?;
    let queries: Vec<QueryScores> = tests
        .iter()
        .zip(&records)
        .map(|(rec, recs)| QueryScores {
            query_id: rec.image_path.clone(),
            truth: rec.sensor_id.clone(),
            scores: recs.iter().map(|r| (r.sensor_id.clone(), r.fused)).collect(),
        })
        .collect();
    let main = compute_metrics(&queries, auc_mode)?;
    let (s, l) = flatten(&queries);
    let roc = roc_points(&s, &l)?;

    let mut sub_scores = BTreeMap::new();
    if matches!(scorer, Scorer::Mode { mode: ScoreMode::Joint, .. }) {
        for (name, pick) in [
            ("ncc", (|r: &ScoreRecord| r.ncc) as fn(&ScoreRecord) -> Option<f64>),
            ("neural", |r: &ScoreRecord| r.neural),
        ] {
            if let Some(qs) = component(&queries, &records, pick) {
                sub_scores.insert(name.to_string(), compute_metrics(&qs, auc_mode)?);
            }
        }
    }

    let report = EvalReport {
        auc: main.auc,
        eer: main.eer,
        top1: main.top1,
        top5: main.top5,
        n_queries: queries.len(),
        n_devices: gallery.len(),
        protocol: Protocol {
            n_refs: manifest.split.n_refs,
            resolutions: pipeline.spec().levels().to_vec(),
            scorer: scorer.name(),
            auc_mode,
            wiener: pipeline.config().wiener,
        },
        sub_scores,
        per_device_auc: per_device_auc(&queries),
        score_matrix: SCORES_FILE.to_string(),
        roc_points: roc,
    };
    Ok(BenchmarkRun { report, records })
}
