use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::MetricSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adamw,
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    CosineWarmup,
    Cosine,
    Step,
    Constant,
}

/// Validation metric used for checkpointing and early stopping. All are
/// higher-is-better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitoredMetric {
    ValAuroc,
    ValPrAuc,
    ValBalancedAccuracy,
    ValMacroF1,
    ValMacroPrecision,
    ValAccuracy,
}

impl MonitoredMetric {
    pub fn pick(self, m: &MetricSet) -> f64 {
        match self {
            MonitoredMetric::ValAuroc => m.auroc,
            MonitoredMetric::ValPrAuc => m.pr_auc,
            MonitoredMetric::ValBalancedAccuracy => m.balanced_accuracy,
            MonitoredMetric::ValMacroF1 => m.macro_f1,
            MonitoredMetric::ValMacroPrecision => m.macro_precision,
            MonitoredMetric::ValAccuracy => m.accuracy,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MonitoredMetric::ValAuroc => "val_auroc",
            MonitoredMetric::ValPrAuc => "val_pr_auc",
            MonitoredMetric::ValBalancedAccuracy => "val_balanced_accuracy",
            MonitoredMetric::ValMacroF1 => "val_macro_f1",
            MonitoredMetric::ValMacroPrecision => "val_macro_precision",
            MonitoredMetric::ValAccuracy => "val_accuracy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopConfig {
    pub enabled: bool,
    pub patience: usize,
    pub min_epochs: usize,
    pub improvement_threshold: f64,
    pub overfit_gap: f64,
    pub overfit_consecutive: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            patience: 15,
            min_epochs: 10,
            improvement_threshold: 0.02,
            overfit_gap: 0.15,
            overfit_consecutive: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub label_smoothing: f64,
    pub patch_dropout: f64,
    /// Weighted sampling kicks in when max/min class count exceeds this.
    pub imbalance_threshold: f64,
    pub early_stop: EarlyStopConfig,
    pub monitored_metric: MonitoredMetric,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 4,
            optimizer: OptimizerKind::Adamw,
            weight_decay: 1e-2,
            schedule: Schedule::CosineWarmup,
            label_smoothing: 0.1,
            patch_dropout: 0.1,
            imbalance_threshold: 1.5,
            early_stop: EarlyStopConfig::default(),
            monitored_metric: MonitoredMetric::ValAuroc,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) || !(0.0..1.0).contains(&self.patch_dropout) {
            return bad("label_smoothing and patch_dropout must be in [0, 1)");
        }
        if self.imbalance_threshold.is_nan() || self.imbalance_threshold < 1.0 {
            return bad("imbalance_threshold must be >= 1");
        }
        let es = &self.early_stop;
        if es.patience == 0 || es.overfit_consecutive == 0 {
            return bad("patience and overfit_consecutive must be >= 1");
        }
        if !(es.improvement_threshold >= 0.0 && es.overfit_gap >= 0.0) {
            return bad("early-stop thresholds must be >= 0");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
