//! Macro-averaged classification metrics computed from class probabilities.
//!
//! Ties: mid-ranks for AUROC, grouped thresholds for average precision,
//! lowest class index for argmax. Classes without both positives and
//! negatives in the evaluated set are skipped from macro means.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub auroc: f64,
    pub pr_auc: f64,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArgmaxMetrics {
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_inputs(probs: &ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
    if probs.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} probability rows for {} labels", probs.nrows(), labels.len())));
    }
    if probs.nrows() == 0 {
        return Err(Error::UndefinedMetric("no samples".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= probs.ncols()) {
        return Err(Error::Shape(format!("label {l} out of range for {} classes", probs.ncols())));
    }
    Ok(())
}

/// Mid-ranks (1-based, ties averaged) of `scores`.
fn mid_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Binary AUROC via the rank-sum statistic. `None` without both classes.
pub fn binary_auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = mid_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, p)| **p).map(|(r, _)| r).sum();
    let (n_pos, n_neg) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Binary average precision, tied scores processed as one threshold step.
pub fn binary_average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|p| **p).count();
    if n_pos == 0 || n_pos == positive.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let group = scores[order[i]];
        while i < order.len() && scores[order[i]] == group {
            tp += usize::from(positive[order[i]]);
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
    }
    Some(ap)
}

fn macro_over_classes(
    probs: &ArrayView2<'_, f64>,
    labels: &[usize],
    per_class: impl Fn(&[f64], &[bool]) -> Option<f64>,
) -> Result<f64> {
    check_inputs(probs, labels)?;
    let values: Vec<f64> = (0..probs.ncols())
        .filter_map(|c| {
            let scores: Vec<f64> = probs.column(c).to_vec();
            let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            per_class(&scores, &positive)
        })
        .collect();
    if values.is_empty() {
        return Err(Error::UndefinedMetric("no class has both positives and negatives".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// One-vs-rest AUROC averaged over classes with positives and negatives.
pub fn auroc_macro(probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    macro_over_classes(&probs, labels, binary_auroc)
}

pub fn average_precision_macro(probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    macro_over_classes(&probs, labels, binary_average_precision)
}

/// Classes that lack positives or negatives and are left out of macro means.
pub fn skipped_classes(n_classes: usize, labels: &[usize]) -> Vec<usize> {
    (0..n_classes)
        .filter(|&c| {
            let pos = labels.iter().filter(|&&l| l == c).count();
            pos == 0 || pos == labels.len()
        })
        .collect()
}

/// Row-wise argmax, ties to the lowest index.
pub fn argmax_rows(probs: ArrayView2<'_, f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
        })
        .collect()
}

pub fn confusion(predictions: &[usize], labels: &[usize], n_classes: usize) -> Vec<ClassCounts> {
    let mut counts = vec![ClassCounts::default(); n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p == l {
            counts[l].tp += 1;
        } else {
            counts[p].fp += 1;
            counts[l].fn_ += 1;
        }
    }
    counts
}

/// Balanced accuracy, macro F1 and precision over classes present in
/// `labels`, plus plain accuracy.
pub fn argmax_metrics(probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<ArgmaxMetrics> {
    check_inputs(&probs, labels)?;
    let predictions = argmax_rows(probs);
    let counts = confusion(&predictions, labels, probs.ncols());
    let present: Vec<&ClassCounts> = counts.iter().filter(|c| c.tp + c.fn_ > 0).collect();
    let mean = |f: fn(&ClassCounts) -> f64| present.iter().map(|c| f(c)).sum::<f64>() / present.len() as f64;
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(ArgmaxMetrics {
        balanced_accuracy: mean(ClassCounts::recall),
        macro_f1: mean(ClassCounts::f1),
        macro_precision: mean(ClassCounts::precision),
        accuracy: correct as f64 / labels.len() as f64,
    })
}

pub fn compute_metrics(probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<MetricSet> {
    let am = argmax_metrics(probs, labels)?;
    Ok(MetricSet {
        auroc: auroc_macro(probs, labels)?,
        pr_auc: average_precision_macro(probs, labels)?,
        balanced_accuracy: am.balanced_accuracy,
        macro_f1: am.macro_f1,
        macro_precision: am.macro_precision,
        accuracy: am.accuracy,
    })
}

/// Mean and sample standard deviation across folds.
pub fn fold_summary(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
