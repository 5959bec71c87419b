use serde::{Deserialize, Serialize};

use super::config::{EarlyStopConfig, MonitoredMetric};
use super::events::{EpochMetrics, SplitName};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopDecision {
    Continue,
    StopPlateau,
    StopOverfit,
}

/// Tracks the best monitored value. A new best must beat the previous one
/// by more than the improvement threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImprovementTracker {
    threshold: f64,
    best: Option<(usize, f64)>,
}

impl ImprovementTracker {
    pub fn new(threshold: f64) -> Self {
        Self { threshold, best: None }
    }

    /// Returns true when `value` becomes the new best.
    pub fn observe(&mut self, epoch: usize, value: f64) -> bool {
        let improved = match self.best {
            None => true,
            Some((_, best)) => value > best + self.threshold,
        };
        if improved {
            self.best = Some((epoch, value));
        }
        improved
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

fn split_values(history: &[EpochMetrics], split: SplitName, metric: MonitoredMetric) -> Vec<(usize, f64)> {
    history.iter().filter(|m| m.split == split).map(|m| (m.epoch, metric.pick(&m.metrics()))).collect()
}

/// Decide whether training should stop after the latest epoch in `history`.
///
/// Never stops before `min_epochs`. Plateau: no improvement beyond the
/// threshold for `patience` epochs. Overfit: train minus val monitored
/// metric above `overfit_gap` for `overfit_consecutive` epochs in a row.
pub fn early_stop_check(history: &[EpochMetrics], cfg: &EarlyStopConfig, monitored: MonitoredMetric) -> StopDecision {
    let val = split_values(history, SplitName::Val, monitored);
    let Some(&(current, _)) = val.last() else { return StopDecision::Continue };
    if !cfg.enabled || current < cfg.min_epochs {
        return StopDecision::Continue;
    }

    let train = split_values(history, SplitName::Train, monitored);
    if val.len() >= cfg.overfit_consecutive {
        let recent = &val[val.len() - cfg.overfit_consecutive..];
        let overfit = recent.iter().all(|&(epoch, v)| {
            train.iter().find(|(e, _)| *e == epoch).is_some_and(|&(_, t)| t - v > cfg.overfit_gap)
        });
        if overfit {
            return StopDecision::StopOverfit;
        }
    }

    let mut tracker = ImprovementTracker::new(cfg.improvement_threshold);
    for &(epoch, v) in &val {
        tracker.observe(epoch, v);
    }
    let (best_epoch, _) = tracker.best().expect("non-empty");
    if current - best_epoch >= cfg.patience {
        StopDecision::StopPlateau
    } else {
        StopDecision::Continue
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricSet;

    fn row(epoch: usize, split: SplitName, auroc: f64) -> EpochMetrics {
        EpochMetrics::new(epoch, split, 0.5, MetricSet { auroc, ..Default::default() }, 1e-3)
    }

    /// First epoch at which the check fires, feeding one epoch at a time.
    fn first_stop(val: &[f64], train: &[f64], cfg: &EarlyStopConfig) -> Option<(usize, StopDecision)> {
        let mut history = Vec::new();
        for (e, (&v, &t)) in val.iter().zip(train).enumerate() {
            history.push(row(e, SplitName::Train, t));
            history.push(row(e, SplitName::Val, v));
            let d = early_stop_check(&history, cfg, MonitoredMetric::ValAuroc);
            if d != StopDecision::Continue {
                return Some((e, d));
            }
        }
        None
    }

    #[test]
    fn constant_trace_plateaus_at_fifteen() {
        let val = vec![0.8; 25];
        assert_eq!(first_stop(&val, &val, &EarlyStopConfig::default()), Some((15, StopDecision::StopPlateau)));
    }

    #[test]
    fn slow_climb_resets_patience_whenever_best_is_exceeded_by_threshold() {
        // +0.01 per epoch: best moves at epochs 0, 3, 6, ... so no plateau.
        let val: Vec<f64> = (0..40).map(|e| 0.5 + 0.01 * e as f64).collect();
        assert_eq!(first_stop(&val, &val, &EarlyStopConfig::default()), None);
    }

    #[test]
    fn sub_threshold_gains_do_not_reset_patience() {
        // +0.015 once then flat: never more than 0.02 above the epoch-0 best.
        let val: Vec<f64> = (0..30).map(|e| if e >= 5 { 0.715 } else { 0.7 }).collect();
        assert_eq!(first_stop(&val, &val, &EarlyStopConfig::default()), Some((15, StopDecision::StopPlateau)));
    }

    #[test]
    fn overfit_after_three_wide_gaps() {
        let val: Vec<f64> = (0..30).map(|e| 0.6 + 0.03 * e as f64).map(|v: f64| v.min(0.75)).collect();
        let train: Vec<f64> = (0..30).map(|e| if e >= 8 { 0.99 } else { 0.7 }).collect();
        // gap > 0.15 from epoch 8 on; guard holds until epoch 10.
        assert_eq!(first_stop(&val, &train, &EarlyStopConfig::default()), Some((10, StopDecision::StopOverfit)));
    }

    #[test]
    fn never_before_min_epochs() {
        let cfg = EarlyStopConfig { patience: 1, ..Default::default() };
        let val = vec![0.5; 12];
        assert_eq!(first_stop(&val, &val, &cfg), Some((10, StopDecision::StopPlateau)));
    }

    #[test]
    fn disabled_never_stops() {
        let cfg = EarlyStopConfig { enabled: false, ..Default::default() };
        assert_eq!(first_stop(&[0.5; 40], &[0.5; 40], &cfg), None);
    }
}
