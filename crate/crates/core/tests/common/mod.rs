#![allow(dead_code)]

use prnu_forge::neural::{ComparatorModel, PreparedInput};
use rand::Rng;

/// Pairwise Mann-Whitney count.
pub fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (s, l) in scores.iter().zip(labels) {
        if !*l {
            continue;
        }
        for (t, m) in scores.iter().zip(labels) {
            if *m {
                continue;
            }
            pairs += 1.0;
            if s > t {
                num += 1.0;
            } else if s == t {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Tries every distinct threshold, counting accepts directly.
pub fn eer_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|l| **l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    thresholds.insert(0, f64::INFINITY);
    let rates = |t: f64| {
        let fa = scores.iter().zip(labels).filter(|(s, l)| !**l && **s >= t).count() as f64;
        let fr = scores.iter().zip(labels).filter(|(s, l)| **l && **s < t).count() as f64;
        (fa / neg, fr / pos)
    };
    let mut prev = rates(thresholds[0]);
    for &t in &thresholds[1..] {
        let cur = rates(t);
        if cur.0 >= cur.1 {
            let d0 = prev.0 - prev.1;
            let d1 = cur.0 - cur.1;
            let a = if d1 == d0 { 0.0 } else { -d0 / (d1 - d0) };
            return prev.0 + a * (cur.0 - prev.0);
        }
        prev = cur;
    }
    unreachable!()
}

/// Random scores with deliberate ties and both classes present.
pub fn random_instance<R: Rng>(rng: &mut R, max_len: usize) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=max_len);
    let levels = rng.random_range(2..=50);
    let quantize = rng.random_bool(0.5);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = labels
        .iter()
        .map(|l| {
            let s: f64 = rng.random::<f64>() + if *l { 0.3 } else { 0.0 };
            if quantize {
                (s * levels as f64).round() / levels as f64
            } else {
                s
            }
        })
        .collect();
    (scores, labels)
}

pub fn random_input<R: Rng>(rng: &mut R, h: usize, w: usize) -> PreparedInput {
    let data = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
    PreparedInput::new(data, h, w).unwrap()
}

/// Mean BCE computed from the logits.
pub fn mean_loss(model: &ComparatorModel, inputs: &[PreparedInput], labels: &[bool]) -> f64 {
    inputs
        .iter()
        .zip(labels)
        .map(|(x, l)| {
            let z = model.logit(x);
            let m = if *l { -z } else { z };
            m.max(0.0) + (-m.abs()).exp().ln_1p()
        })
        .sum::<f64>()
        / inputs.len() as f64
}
