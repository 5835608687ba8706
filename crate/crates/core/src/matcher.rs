//! Fingerprint/residual similarity: NCC, the neural comparator, their
//! multi-resolution aggregates and 1:N ranking.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::neural::ComparatorModel;
use crate::plane::{Fingerprint, ImagePlane, ResidualPlane, ResolutionSpec};

/// NCC value plus a flag set when either input had zero centered norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NccScore {
    pub value: f64,
    pub degenerate: bool,
}

fn check_dims(fp: &Fingerprint, res: &ResidualPlane) -> Result<()> {
    if fp.dims() != res.dims() {
        return Err(Error::DimensionMismatch {
            expected: fp.dims(),
            actual: res.dims(),
        });
    }
    Ok(())
}

/// Normalized cross-correlation of two equally long sequences. Constant
/// inputs yield `0` with the degenerate flag.
pub fn ncc_slices(a: &[f32], b: &[f32]) -> NccScore {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().map(|v| *v as f64).sum::<f64>() / n;
    let mb = b.iter().map(|v| *v as f64).sum::<f64>() / n;
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let dx = *x as f64 - ma;
        let dy = *y as f64 - mb;
        dot += dx * dy;
        na += dx * dx;
        nb += dy * dy;
    }
    if na == 0.0 || nb == 0.0 {
        return NccScore {
            value: 0.0,
            degenerate: true,
        };
    }
    NccScore {
        value: (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Centered dot product over the product of centered norms.
pub fn ncc(fp: &Fingerprint, res: &ResidualPlane) -> Result<NccScore> {
    check_dims(fp, res)?;
    Ok(ncc_slices(fp.data(), res.data()))
}

/// Elementwise product `K ⊙ R`.
pub fn hadamard(fp: &Fingerprint, res: &ResidualPlane) -> Result<ImagePlane> {
    check_dims(fp, res)?;
    let data = fp.data().iter().zip(res.data()).map(|(a, b)| a * b).collect();
    ImagePlane::new(fp.height(), fp.width(), data)
}

/// `α_i = max(h_i, w_i) / max_j max(h_j, w_j)`.
pub fn resolution_weights(spec: &ResolutionSpec) -> Vec<f64> {
    let top = spec
        .levels()
        .iter()
        .map(|(h, w)| (*h).max(*w))
        .max()
        .expect("nonempty spec") as f64;
    spec.levels()
        .iter()
        .map(|(h, w)| (*h).max(*w) as f64 / top)
        .collect()
}

fn check_levels(fps: &[Fingerprint], ress: &[ResidualPlane], spec: &ResolutionSpec) -> Result<()> {
    if fps.len() != spec.len() || ress.len() != spec.len() {
        return Err(Error::InvalidArgument(format!(
            "misaligned levels: {} fingerprints, {} residuals, {} resolutions",
            fps.len(),
            ress.len(),
            spec.len()
        )));
    }
    for ((fp, res), level) in fps.iter().zip(ress).zip(spec.levels()) {
        check_dims(fp, res)?;
        if fp.dims() != *level {
            return Err(Error::DimensionMismatch {
                expected: *level,
                actual: fp.dims(),
            });
        }
    }
    Ok(())
}

/// `Σ α_i · scorer(K_i, R_i)` over the levels in order.
pub fn multires_score<F>(
    fps: &[Fingerprint],
    ress: &[ResidualPlane],
    spec: &ResolutionSpec,
    mut scorer: F,
) -> Result<f64>
where
    F: FnMut(&Fingerprint, &ResidualPlane) -> Result<f64>,
{
    check_levels(fps, ress, spec)?;
    let scores = fps
        .iter()
        .zip(ress)
        .map(|(fp, res)| scorer(fp, res))
        .collect::<Result<Vec<_>>>()?;
    Ok(weighted_sum(&resolution_weights(spec), &scores))
}

/// `Σ w_i · s_i`, accumulated in index order.
pub fn weighted_sum(weights: &[f64], scores: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), scores.len());
    weights.iter().zip(scores).fold(0.0, |acc, (w, s)| acc + w * s)
}

/// Which similarity feeds the fused score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    #[default]
    Ncc,
    Neural,
    Joint,
}

impl ScoreMode {
    pub fn needs_model(self) -> bool {
        !matches!(self, ScoreMode::Ncc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::Ncc => "ncc",
            ScoreMode::Neural => "neural",
            ScoreMode::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelScore {
    pub resolution: (usize, usize),
    pub weight: f64,
    pub ncc: Option<f64>,
    /// Set when NCC hit a constant input and was defined as 0.
    pub ncc_degenerate: bool,
    pub neural: Option<f64>,
}

/// Score of one (query, device) pair. `ncc` and `neural` hold the
/// weighted multi-resolution aggregates of each scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sensor_id: String,
    pub query_id: String,
    pub ncc: Option<f64>,
    pub neural: Option<f64>,
    pub fused: f64,
    pub per_resolution: Vec<LevelScore>,
}

impl ScoreRecord {
    pub fn any_degenerate(&self) -> bool {
        self.per_resolution.iter().any(|l| l.ncc_degenerate)
    }
}

/// Scores one query against one device at every level.
pub fn score_levels(
    fps: &[Fingerprint],
    ress: &[ResidualPlane],
    spec: &ResolutionSpec,
    mode: ScoreMode,
    model: Option<&ComparatorModel>,
) -> Result<ScoreRecord> {
    check_levels(fps, ress, spec)?;
    let model = match (mode.needs_model(), model) {
        (true, None) => {
            return Err(Error::Config(format!(
                "{} scoring needs a comparator model",
                mode.as_str()
            )))
        }
        (true, Some(m)) => Some(m),
        (false, _) => None,
    };
    let use_ncc = mode != ScoreMode::Neural;
    let weights = resolution_weights(spec);
    let mut per_resolution = Vec::with_capacity(spec.len());
    let (mut ncc_total, mut neural_total, mut fused) = (0.0, 0.0, 0.0);
    for (((fp, res), a), level) in fps.iter().zip(ress).zip(&weights).zip(spec.levels()) {
        let n = if use_ncc { Some(ncc(fp, res)?) } else { None };
        let e = match model {
            Some(m) => Some(m.forward(&hadamard(fp, res)?)?),
            None => None,
        };
        let nv = n.map(|s| s.value);
        if let Some(v) = nv {
            ncc_total += a * v;
        }
        if let Some(v) = e {
            neural_total += a * v;
        }
        fused += a * (e.unwrap_or(0.0) + nv.unwrap_or(0.0));
        per_resolution.push(LevelScore {
            resolution: *level,
            weight: *a,
            ncc: nv,
            ncc_degenerate: n.is_some_and(|s| s.degenerate),
            neural: e,
        });
    }
    Ok(ScoreRecord {
        sensor_id: fps[0].sensor_id().to_string(),
        query_id: ress[0].source_id().to_string(),
        ncc: use_ncc.then_some(ncc_total),
        neural: model.map(|_| neural_total),
        fused,
        per_resolution,
    })
}

/// `Σ α_i (E(K_i ⊙ R_i) + NCC(K_i, R_i))`.
pub fn joint_score(
    fps: &[Fingerprint],
    ress: &[ResidualPlane],
    spec: &ResolutionSpec,
    model: &ComparatorModel,
) -> Result<ScoreRecord> {
    score_levels(fps, ress, spec, ScoreMode::Joint, Some(model))
}

/// Descending fused score, ties by ascending sensor id.
pub fn sort_records(records: &mut [ScoreRecord]) {
    records.sort_by(|a, b| {
        b.fused
            .total_cmp(&a.fused)
            .then_with(|| a.sensor_id.cmp(&b.sensor_id))
    });
}

/// Scores a query against every gallery device and ranks the results.
///
/// `gallery[d]` holds device `d`'s fingerprints, one per level of `spec`.
pub fn rank_devices(
    gallery: &[Vec<Fingerprint>],
    query: &[ResidualPlane],
    spec: &ResolutionSpec,
    mode: ScoreMode,
    model: Option<&ComparatorModel>,
) -> Result<Vec<ScoreRecord>> {
    if gallery.is_empty() {
        return Err(Error::EmptyInput("empty gallery"));
    }
    let mut records = gallery
        .par_iter()
        .map(|fps| score_levels(fps, query, spec, mode, model))
        .collect::<Result<Vec<_>>>()?;
    sort_records(&mut records);
    Ok(records)
}

fn opt(v: Option<f64>) -> String {
    v.map(sig9).unwrap_or_default()
}

/// CSV with header `query_id,sensor_id,ncc,neural,fused`.
pub fn write_scores_csv<'a>(
    records: impl IntoIterator<Item = &'a ScoreRecord>,
    out: impl Write,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["query_id", "sensor_id", "ncc", "neural", "fused"])
        .map_err(to_err)?;
    for r in records {
        w.write_record([
            r.query_id.as_str(),
            r.sensor_id.as_str(),
            &opt(r.ncc),
            &opt(r.neural),
            &sig9(r.fused),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{InputNorm, ModelConfig};

    fn fp(data: Vec<f32>, h: usize, w: usize) -> Fingerprint {
        Fingerprint::new("k", h, w, data, 1, false, (h, w)).unwrap()
    }

    fn res(data: Vec<f32>, h: usize, w: usize) -> ResidualPlane {
        ResidualPlane::new(h, w, data, "q").unwrap()
    }

    #[test]
    fn ncc_hand_example() {
        let s = ncc(&fp(vec![1., 2., 3., 4.], 2, 2), &res(vec![2., 1., 4., 3.], 2, 2)).unwrap();
        assert!((s.value - 0.6).abs() < 1e-9);
        assert!(!s.degenerate);
    }

    #[test]
    fn ncc_self_and_anti() {
        let k = vec![0.3, -1.0, 2.5, 0.0, 0.7, -0.2];
        let s = ncc(&fp(k.clone(), 2, 3), &res(k.clone(), 2, 3)).unwrap();
        assert!((s.value - 1.0).abs() < 1e-6);
        let neg: Vec<f32> = k.iter().map(|v| -v).collect();
        let s = ncc(&fp(k, 2, 3), &res(neg, 2, 3)).unwrap();
        assert!((s.value + 1.0).abs() < 1e-6);
    }

    #[test]
    fn ncc_constant_is_flagged_zero() {
        let s = ncc(&fp(vec![1.0; 4], 2, 2), &res(vec![1., 2., 3., 4.], 2, 2)).unwrap();
        assert_eq!(s.value, 0.0);
        assert!(s.degenerate);
        assert!(ncc(&fp(vec![1.0; 4], 2, 2), &res(vec![1.0; 6], 2, 3)).is_err());
    }

    #[test]
    fn hadamard_examples() {
        let k = fp(vec![1., -2., 3., 0.5], 2, 2);
        let out = hadamard(&k, &res(vec![2., 2., -1., 4.], 2, 2)).unwrap();
        assert_eq!(out.data(), &[2., -4., -3., 2.]);
        let out = hadamard(&k, &res(vec![0.; 4], 2, 2)).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
        let out = hadamard(&k, &res(vec![1.; 4], 2, 2)).unwrap();
        assert_eq!(out.data(), k.data());
        assert!(hadamard(&k, &res(vec![1.; 6], 3, 2)).is_err());
    }

    #[test]
    fn weights_follow_largest_side() {
        let w = resolution_weights(&ResolutionSpec::single(3, 5).unwrap());
        assert_eq!(w, vec![1.0]);
        let w = resolution_weights(&ResolutionSpec::parse("1024x1024,1400x1400").unwrap());
        assert!((w[0] - 1024.0 / 1400.0).abs() < 1e-15);
        assert!((w[0] - 0.731_428_571).abs() < 1e-6);
        assert_eq!(w[1], 1.0);
        let w = resolution_weights(&ResolutionSpec::parse("768x768,1024x1024,1400x1400").unwrap());
        assert!((w[0] - 0.548_571_428).abs() < 1e-6);
    }

    fn levels(spec: &ResolutionSpec, seed: f32) -> (Vec<Fingerprint>, Vec<ResidualPlane>) {
        let mut fps = Vec::new();
        let mut ress = Vec::new();
        for (i, (h, w)) in spec.levels().iter().enumerate() {
            let n = h * w;
            let k: Vec<f32> = (0..n).map(|j| ((j as f32 + seed) * 0.37).sin()).collect();
            let r: Vec<f32> = (0..n)
                .map(|j| ((j as f32 + seed) * 0.37).sin() * 0.5 + ((j * 7 + i) as f32).cos())
                .collect();
            fps.push(Fingerprint::new("dev", *h, *w, k, 5, true, (*h, *w)).unwrap());
            ress.push(ResidualPlane::new(*h, *w, r, "q").unwrap());
        }
        (fps, ress)
    }

    #[test]
    fn multires_constant_and_recorded_scores() {
        let spec = ResolutionSpec::parse("12x12,16x16").unwrap();
        let (fps, ress) = levels(&spec, 0.0);
        let s = multires_score(&fps, &ress, &spec, |_, _| Ok(0.25)).unwrap();
        assert!((s - 0.25 * (0.75 + 1.0)).abs() < 1e-12);

        assert!((weighted_sum(&[0.7314, 1.0], &[0.4, 0.9]) - 1.19256).abs() < 1e-6);
        let mut recorded = [0.4, 0.9].into_iter();
        let s = multires_score(&fps, &ress, &spec, |_, _| Ok(recorded.next().unwrap())).unwrap();
        assert!((s - (0.75 * 0.4 + 0.9)).abs() < 1e-12);
    }

    #[test]
    fn single_level_equals_scorer() {
        let spec = ResolutionSpec::single(16, 16).unwrap();
        let (fps, ress) = levels(&spec, 1.0);
        let direct = ncc(&fps[0], &ress[0]).unwrap().value;
        let agg = multires_score(&fps, &ress, &spec, |k, r| Ok(ncc(k, r)?.value)).unwrap();
        assert_eq!(agg, direct);
    }

    #[test]
    fn misaligned_levels_rejected() {
        let spec = ResolutionSpec::parse("12x12,16x16").unwrap();
        let (fps, ress) = levels(&spec, 0.0);
        assert!(multires_score(&fps[..1], &ress, &spec, |_, _| Ok(1.0)).is_err());
        let swapped = vec![fps[1].clone(), fps[0].clone()];
        let rs = vec![ress[1].clone(), ress[0].clone()];
        assert!(multires_score(&swapped, &rs, &spec, |_, _| Ok(1.0)).is_err());
    }

    #[test]
    fn joint_with_zero_head_adds_half_per_weight() {
        let spec = ResolutionSpec::parse("16x16,24x24").unwrap();
        let (fps, ress) = levels(&spec, 2.0);
        let mut model = ComparatorModel::new(
            ModelConfig {
                channels: vec![2, 2],
                input_norm: InputNorm::Rms,
            },
            1,
        )
        .unwrap();
        model.set_head(0.0, 0.0);
        let rec = joint_score(&fps, &ress, &spec, &model).unwrap();
        let n = multires_score(&fps, &ress, &spec, |k, r| Ok(ncc(k, r)?.value)).unwrap();
        let wsum: f64 = resolution_weights(&spec).iter().sum();
        assert!((rec.fused - (n + 0.5 * wsum)).abs() < 1e-6);
        assert!((rec.fused - (rec.ncc.unwrap() + rec.neural.unwrap())).abs() < 1e-9);
        assert_eq!(rec.per_resolution.len(), 2);
    }

    #[test]
    fn neural_mode_requires_model() {
        let spec = ResolutionSpec::single(16, 16).unwrap();
        let (fps, ress) = levels(&spec, 0.0);
        assert!(score_levels(&fps, &ress, &spec, ScoreMode::Joint, None).is_err());
        let rec = score_levels(&fps, &ress, &spec, ScoreMode::Ncc, None).unwrap();
        assert!(rec.neural.is_none());
        assert_eq!(rec.fused, rec.ncc.unwrap());
    }

    #[test]
    fn ranking_ties_break_by_sensor_id() {
        let spec = ResolutionSpec::single(16, 16).unwrap();
        let (fps, ress) = levels(&spec, 0.0);
        let mut a = fps[0].clone();
        a.sensor_id = "b".into();
        let mut b = fps[0].clone();
        b.sensor_id = "a".into();
        let ranked = rank_devices(&[vec![a], vec![b]], &ress, &spec, ScoreMode::Ncc, None).unwrap();
        assert_eq!(ranked[0].sensor_id, "a");
        assert_eq!(ranked[0].fused, ranked[1].fused);
        assert!(rank_devices(&[], &ress, &spec, ScoreMode::Ncc, None).is_err());
    }

    #[test]
    fn csv_layout() {
        let rec = ScoreRecord {
            sensor_id: "cam,1".into(),
            query_id: "q".into(),
            ncc: Some(0.5),
            neural: None,
            fused: 0.5,
            per_resolution: vec![],
        };
        let mut buf = Vec::new();
        write_scores_csv([&rec], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "query_id,sensor_id,ncc,neural,fused\nq,\"cam,1\",0.500000000,,0.500000000\n"
        );
    }
}
