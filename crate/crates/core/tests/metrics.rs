mod common;

use prnu_forge::{eer, roc_auc, topk_accuracy};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn null_auc_is_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let labels: Vec<bool> = (0..10_000).map(|_| rng.random_bool(0.5)).collect();
    let auc = roc_auc(&scores, &labels).unwrap();
    assert!((auc - 0.5).abs() < 0.02, "{auc}");
}

#[test]
fn thousand_score_instance_matches_pairwise_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let scores: Vec<f64> = (0..1000).map(|_| (rng.random::<f64>() * 40.0).round()).collect();
    let labels: Vec<bool> = (0..1000).map(|i| i % 7 == 0 || rng.random_bool(0.2)).collect();
    let a = roc_auc(&scores, &labels).unwrap();
    assert!((a - common::auc_oracle(&scores, &labels)).abs() <= 1e-9);
}

#[test]
fn eer_of_three_by_three() {
    let scores = [0.9, 0.8, 0.4, 0.7, 0.3, 0.2];
    let labels = [true, true, true, false, false, false];
    assert!((eer(&scores, &labels).unwrap() - 1.0 / 3.0).abs() <= 1e-9);
}

#[test]
fn top5_with_ranks_one_three_seven() {
    let ids: Vec<String> = (0..8).map(|i| format!("d{i}")).collect();
    let rankings = vec![ids.clone(); 3];
    let truth = vec![ids[0].clone(), ids[2].clone(), ids[6].clone()];
    let t5 = topk_accuracy(&rankings, &truth, 5).unwrap();
    assert!((t5 - 66.67).abs() < 0.01);
    assert_eq!(topk_accuracy(&rankings, &truth, 8).unwrap(), 100.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auc_and_eer_match_oracles(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, l) = common::random_instance(&mut rng, 300);
        prop_assert!((roc_auc(&s, &l).unwrap() - common::auc_oracle(&s, &l)).abs() <= 1e-9);
        prop_assert!((eer(&s, &l).unwrap() - common::eer_oracle(&s, &l)).abs() <= 1e-9);
    }

    #[test]
    fn auc_is_invariant_to_monotone_maps(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, l) = common::random_instance(&mut rng, 200);
        let mapped: Vec<f64> = s.iter().map(|v| v.powi(3) * 8.0).collect();
        prop_assert_eq!(roc_auc(&s, &l).unwrap(), roc_auc(&mapped, &l).unwrap());
    }

    #[test]
    fn flipping_labels_mirrors_auc(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, l) = common::random_instance(&mut rng, 200);
        let flipped: Vec<bool> = l.iter().map(|v| !v).collect();
        let sum = roc_auc(&s, &l).unwrap() + roc_auc(&s, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }
}
