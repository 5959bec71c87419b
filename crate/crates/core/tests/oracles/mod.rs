//! Independent reference implementations used as test oracles. Nothing
//! here calls into the code paths it checks.
#![allow(dead_code)]

use slidemil::model::{loss_and_grads, LossConfig, Mode, ModelConfig, ModelParams};
use slidemil::store::Batch;

/// Worst relative error between analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub worst_rel: f64,
    pub worst_tensor: String,
    pub checked: usize,
    /// Scalars where the loss is not smooth within the step (a ReLU kink or
    /// a top-k membership change), detected by disagreement between the
    /// `(h, h/2)` and `(h/2, h/4)` extrapolations.
    pub non_smooth: usize,
}

/// Perturb every trainable scalar and compare the analytic gradient with the
/// Richardson-extrapolated central difference `(4 D(h/2) - D(h)) / 3`.
pub fn finite_difference_check(
    params: &ModelParams<f64>,
    config: &ModelConfig,
    batch: &Batch<f64>,
    loss_cfg: &LossConfig,
    mode: Mode,
    dropout_seed: u64,
    h: f64,
) -> GradCheck {
    let analytic = loss_and_grads(params, config, batch, loss_cfg, mode, dropout_seed).unwrap().grads;
    let loss_at = |p: &ModelParams<f64>| loss_and_grads(p, config, batch, loss_cfg, mode, dropout_seed).unwrap().loss;
    let mut worst = GradCheck { worst_rel: 0.0, worst_tensor: String::new(), checked: 0, non_smooth: 0 };
    let mut probe = params.clone();
    for (name, grad) in analytic.iter() {
        for (idx, &g) in grad.indexed_iter() {
            let orig = params.get(name)[idx];
            let mut central = |step: f64| {
                probe.get_mut(name).unwrap()[idx] = orig + step;
                let up = loss_at(&probe);
                probe.get_mut(name).unwrap()[idx] = orig - step;
                let down = loss_at(&probe);
                probe.get_mut(name).unwrap()[idx] = orig;
                (up - down) / (2.0 * step)
            };
            let (d1, d2, d4) = (central(h), central(h / 2.0), central(h / 4.0));
            let numeric = (4.0 * d2 - d1) / 3.0;
            let finer = (4.0 * d4 - d2) / 3.0;
            worst.checked += 1;
            if (numeric - finer).abs() > 1e-3 * numeric.abs().max(finer.abs()) + 1e-9 {
                worst.non_smooth += 1;
                continue;
            }
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-6);
            if rel > worst.worst_rel {
                worst.worst_rel = rel;
                worst.worst_tensor = format!("{name}{idx:?} analytic={g:e} numeric={numeric:e}");
            }
        }
    }
    worst
}

/// One-vs-rest AUROC by comparing every positive with every negative.
pub fn pairwise_auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positive[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// Average precision by walking distinct score thresholds from high to low
/// and summing recall increments times precision.
pub fn step_sum_ap(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let total_pos = positive.iter().filter(|p| **p).count() as f64;
    if total_pos == 0.0 || total_pos == scores.len() as f64 {
        return None;
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let selected: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = selected.iter().filter(|&&i| positive[i]).count() as f64;
        let recall = tp / total_pos;
        let precision = tp / selected.len() as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}
