//! Persisted entities and job payload schemas.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use slidemil::job::{DataSource, TrainJobConfig};
use slidemil::metrics::MetricSet;
use slidemil::model::{ModelConfig, Strategy};
use slidemil::train::{EpochMetrics, FinalReport, SplitName, TrainConfig};
use slidemil::tuner::{TuneConfig, TuneResult};

use crate::error::{OrchestratorError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Train,
    Tune,
    Compare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Completed,
    Failed,
    Stopped,
}

impl JobState {
    pub const ALL: [JobState; 5] =
        [JobState::Queued, JobState::Running, JobState::Completed, JobState::Failed, JobState::Stopped];

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Completed | JobState::Failed | JobState::Stopped)
    }

    /// queued -> running -> {completed, failed, stopped}; nothing else.
    pub fn can_transition_to(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (JobState::Queued, JobState::Running)
                | (JobState::Running, JobState::Completed | JobState::Failed | JobState::Stopped)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub session_id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub config: Value,
    pub created_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub ended_at: Option<DateTime<Utc>>,
    pub error: Option<String>,
    #[serde(default)]
    pub child_ids: Vec<String>,
    #[serde(default)]
    pub parent_id: Option<String>,
    #[serde(default)]
    pub strategy: Option<Strategy>,
    /// Best-checkpoint summary once a training run finishes.
    #[serde(default)]
    pub report: Option<FinalReport>,
    /// Malformed trainer lines and other non-fatal ingestion problems.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl JobRecord {
    /// Apply a legal state change and keep the timestamps consistent:
    /// `ended_at` is set exactly when the state is terminal.
    pub fn transition(&mut self, next: JobState, now: DateTime<Utc>) -> Result<()> {
        if !self.state.can_transition_to(next) {
            return Err(OrchestratorError::Conflict(format!(
                "job {} cannot go from {:?} to {:?}",
                self.job_id, self.state, next
            )));
        }
        self.state = next;
        if next == JobState::Running {
            self.started_at = Some(now);
        }
        if next.is_terminal() {
            self.ended_at = Some(now);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEvent {
    pub job_id: String,
    pub epoch: usize,
    pub split: SplitName,
    pub payload: EpochMetrics,
}

/// Read position in a job's log. Only complete lines are consumed; an
/// unterminated tail is kept in `partial_line` and re-read on the next poll
/// once its newline has arrived.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogCursor {
    pub job_id: String,
    pub byte_offset: u64,
    pub partial_line: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentRecord {
    pub widget_id: String,
    pub job_id: String,
    pub title: String,
    pub description: String,
    pub organ: String,
    pub tags: Vec<String>,
    pub performance_summary: BTreeMap<String, f64>,
    pub artifact_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployRequest {
    pub job_id: String,
    #[serde(default)]
    pub approved: Option<bool>,
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub organ: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub session_id: String,
    pub kind: JobKind,
    pub config: Value,
}

/// Payload of a tune job: the base training job and the search to run on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneJobConfig {
    pub job: TrainJobConfig,
    #[serde(default)]
    pub tune: TuneConfig,
}

/// Payload of a compare job: one child train job per strategy, all sharing
/// the cohort, split seed and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareJobConfig {
    pub data: DataSource,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split_seed: u64,
}

impl CompareJobConfig {
    pub fn child(&self, strategy: Strategy) -> TrainJobConfig {
        TrainJobConfig { train: self.train.clone(), split_seed: self.split_seed, ..TrainJobConfig::new(self.data.clone(), strategy) }
    }
}

/// Written by a tune driver as `tune_result.json` in its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub base_train: TrainConfig,
    pub base_model: ModelConfig,
    pub result: TuneResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: Strategy,
    pub job_id: String,
    pub state: JobState,
    pub best_epoch: Option<usize>,
    pub val: Option<MetricSet>,
    pub test: Option<MetricSet>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub job_id: String,
    pub state: JobState,
    /// True once every child has reached a terminal state.
    pub complete: bool,
    pub rows: Vec<ComparisonRow>,
}
