//! Structured lines the trainer writes to stdout, one JSON object each,
//! prefixed with `[trainer] `.

use serde::{Deserialize, Serialize};

use super::early_stop::StopDecision;
use crate::error::Result;
use crate::metrics::MetricSet;

pub const LINE_PREFIX: &str = "[trainer] ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: SplitName,
    pub loss: f64,
    pub auroc: f64,
    pub pr_auc: f64,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub accuracy: f64,
    pub learning_rate: f64,
    /// Classes left out of the macro means because the split lacks
    /// positives or negatives for them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_classes: Vec<usize>,
}

impl EpochMetrics {
    pub fn new(epoch: usize, split: SplitName, loss: f64, m: MetricSet, learning_rate: f64) -> Self {
        Self {
            epoch,
            split,
            loss,
            auroc: m.auroc,
            pr_auc: m.pr_auc,
            balanced_accuracy: m.balanced_accuracy,
            macro_f1: m.macro_f1,
            macro_precision: m.macro_precision,
            accuracy: m.accuracy,
            learning_rate,
            skipped_classes: Vec::new(),
        }
    }

    pub fn metrics(&self) -> MetricSet {
        MetricSet {
            auroc: self.auroc,
            pr_auc: self.pr_auc,
            balanced_accuracy: self.balanced_accuracy,
            macro_f1: self.macro_f1,
            macro_precision: self.macro_precision,
            accuracy: self.accuracy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    StopPlateau,
    StopOverfit,
}

impl From<StopDecision> for StopReason {
    fn from(d: StopDecision) -> Self {
        match d {
            StopDecision::Continue => StopReason::Completed,
            StopDecision::StopPlateau => StopReason::StopPlateau,
            StopDecision::StopOverfit => StopReason::StopOverfit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub best_epoch: usize,
    pub best_metric_value: f64,
    pub monitored: String,
    pub stop_reason: StopReason,
    pub epochs_run: usize,
    /// Validation metrics of the best checkpoint.
    pub val: MetricSet,
    pub test: Option<MetricSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrainerEvent {
    Status { state: RunState, message: String },
    Epoch(EpochMetrics),
    Final(FinalReport),
}

impl TrainerEvent {
    /// The full stdout line, without a trailing newline.
    pub fn to_line(&self) -> String {
        format!("{LINE_PREFIX}{}", serde_json::to_string(self).expect("events serialize"))
    }
}

/// `None` for lines that are not trainer events; `Some(Err)` for prefixed
/// lines whose JSON is malformed.
pub fn parse_trainer_line(line: &str) -> Option<Result<TrainerEvent>> {
    let json = line.strip_suffix('\n').unwrap_or(line);
    let json = json.strip_suffix('\r').unwrap_or(json).strip_prefix(LINE_PREFIX)?;
    Some(serde_json::from_str(json).map_err(Into::into))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_line_layout() {
        let m = MetricSet { auroc: 0.88, pr_auc: 0.84, balanced_accuracy: 0.81, macro_f1: 0.8, macro_precision: 0.82, accuracy: 0.83 };
        let line = TrainerEvent::Epoch(EpochMetrics::new(3, SplitName::Val, 0.41, m, 0.0008)).to_line();
        assert_eq!(
            line,
            r#"[trainer] {"type":"epoch","epoch":3,"split":"val","loss":0.41,"auroc":0.88,"pr_auc":0.84,"balanced_accuracy":0.81,"macro_f1":0.8,"macro_precision":0.82,"accuracy":0.83,"learning_rate":0.0008}"#
        );
        assert_eq!(parse_trainer_line(&line).unwrap().unwrap(), TrainerEvent::Epoch(EpochMetrics::new(3, SplitName::Val, 0.41, m, 0.0008)));
    }

    #[test]
    fn non_prefixed_and_malformed() {
        assert!(parse_trainer_line("epoch 3 done").is_none());
        assert!(parse_trainer_line("[trainer]{}").is_none());
        assert!(parse_trainer_line("[trainer] {not json").unwrap().is_err());
        let status = parse_trainer_line("[trainer] {\"type\":\"status\",\"state\":\"running\",\"message\":\"x\"}\n");
        assert!(matches!(status, Some(Ok(TrainerEvent::Status { state: RunState::Running, .. }))));
    }
}
