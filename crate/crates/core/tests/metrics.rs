mod oracles;

use ndarray::{array, Array2};
use proptest::prelude::*;
use slidemil::metrics::{auroc_macro, average_precision_macro, binary_auroc, binary_average_precision, compute_metrics};
use slidemil::rng::SplitMix64;

use oracles::{pairwise_auroc, step_sum_ap};

/// Scores on a coarse grid so ties are common.
fn random_instance(rng: &mut SplitMix64) -> (Vec<f64>, Vec<bool>) {
    let n = 2 + rng.below(60) as usize;
    let levels = 1 + rng.below(12);
    let mut positive: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.4).collect();
    positive[0] = true;
    positive[1] = false;
    let scores = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
    (scores, positive)
}

#[test]
fn binary_metrics_match_oracles_on_200_instances() {
    let mut rng = SplitMix64::new(2024);
    for i in 0..200 {
        let (scores, positive) = random_instance(&mut rng);
        let auroc = binary_auroc(&scores, &positive).unwrap();
        let ap = binary_average_precision(&scores, &positive).unwrap();
        assert!((auroc - pairwise_auroc(&scores, &positive).unwrap()).abs() <= 1e-12, "instance {i}");
        assert!((ap - step_sum_ap(&scores, &positive).unwrap()).abs() <= 1e-12, "instance {i}");
    }
}

#[test]
fn macro_metrics_average_one_vs_rest_oracles() {
    let mut rng = SplitMix64::new(77);
    for _ in 0..50 {
        let (n, c) = (30 + rng.below(40) as usize, 2 + rng.below(4) as usize);
        let labels: Vec<usize> = (0..n).map(|i| if i < c { i } else { rng.below(c as u64) as usize }).collect();
        let mut probs = Array2::from_shape_fn((n, c), |_| rng.below(8) as f64 + 0.5);
        for mut row in probs.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        let oracle = |f: fn(&[f64], &[bool]) -> Option<f64>| {
            let v: Vec<f64> = (0..c)
                .filter_map(|k| f(&probs.column(k).to_vec(), &labels.iter().map(|&l| l == k).collect::<Vec<_>>()))
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!((auroc_macro(probs.view(), &labels).unwrap() - oracle(pairwise_auroc)).abs() <= 1e-12);
        assert!((average_precision_macro(probs.view(), &labels).unwrap() - oracle(step_sum_ap)).abs() <= 1e-12);
    }
}

#[test]
fn majority_predictor_on_imbalanced_data() {
    let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 90)).collect();
    let probs = Array2::from_shape_fn((100, 2), |(_, k)| if k == 0 { 0.9 } else { 0.1 });
    let m = compute_metrics(probs.view(), &labels).unwrap();
    assert_eq!(m.accuracy, 0.9);
    assert_eq!(m.balanced_accuracy, 0.5);
    assert_eq!(m.auroc, 0.5);
    assert!((m.macro_f1 - (2.0 * 0.9 / 1.9) / 2.0).abs() < 1e-12);
    assert!((m.macro_precision - 0.45).abs() < 1e-12);
}

#[test]
fn perfect_and_inverted_rankings() {
    let labels = [0, 0, 1, 1];
    let good = array![[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.1, 0.9]];
    let bad = good.mapv(|p| 1.0 - p);
    assert_eq!(compute_metrics(good.view(), &labels).unwrap().auroc, 1.0);
    assert_eq!(compute_metrics(good.view(), &labels).unwrap().pr_auc, 1.0);
    assert_eq!(compute_metrics(bad.view(), &labels).unwrap().auroc, 0.0);
}

#[test]
fn single_class_evaluation_is_undefined() {
    let probs = array![[0.6, 0.4], [0.7, 0.3]];
    assert!(compute_metrics(probs.view(), &[0, 0]).is_err());
    assert!(compute_metrics(probs.view(), &[0]).is_err());
}

proptest! {
    #[test]
    fn auroc_is_invariant_to_monotone_transforms(
        raw in proptest::collection::vec((0u8..20, any::<bool>()), 2..80),
        shift in -5.0f64..5.0,
        scale in 0.1f64..10.0,
    ) {
        let (scores, positive): (Vec<f64>, Vec<bool>) = raw.iter().map(|&(s, p)| (s as f64, p)).unzip();
        let transformed: Vec<f64> = scores.iter().map(|s| (s * scale + shift).exp()).collect();
        let a = binary_auroc(&scores, &positive);
        prop_assert_eq!(a, binary_auroc(&transformed, &positive));
        if let Some(a) = a {
            prop_assert!((0.0..=1.0).contains(&a));
            let flipped: Vec<bool> = positive.iter().map(|p| !p).collect();
            prop_assert!((binary_auroc(&scores, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
        }
    }
}
