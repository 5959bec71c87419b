//! Staged pairwise hyperparameter search. Each stage searches two related
//! parameters with everything else held fixed, locks in the winner, and
//! moves on.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Strategy};
use crate::rng::SplitMix64;
use crate::train::{run_training, MonitoredMetric, Splits, TrainConfig};

pub const KEY_LEARNING_RATE: &str = "learning_rate";
pub const KEY_ATTN_DIM: &str = "attn_dim";
pub const KEY_HIDDEN_SIZE: &str = "hidden_size";
pub const KEY_HEAD_DROPOUT: &str = "head_dropout";
pub const KEY_ATTN_DROPOUT: &str = "attn_dropout";
pub const KEY_LABEL_SMOOTHING: &str = "label_smoothing";
pub const KEY_WEIGHT_DECAY: &str = "weight_decay";

/// Keys that may leave the process in a tuning outcome.
pub const OUTCOME_ALLOWLIST: [&str; 11] = [
    "learning_rate",
    "attn_dim",
    "hidden_sizes",
    "head_dropout",
    "attn_dropout",
    "label_smoothing",
    "weight_decay",
    "epochs",
    "batch_size",
    "optimizer",
    "schedule",
];

pub type ConfigDelta = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamAxis {
    pub key: String,
    pub candidates: Vec<f64>,
}

impl ParamAxis {
    fn new(key: &str, candidates: &[f64]) -> Self {
        Self { key: key.to_owned(), candidates: candidates.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub param_a: ParamAxis,
    pub param_b: ParamAxis,
}

impl StageSpec {
    pub fn grid_size(&self) -> usize {
        self.param_a.candidates.len() * self.param_b.candidates.len()
    }

    pub fn validate(&self) -> Result<()> {
        for axis in [&self.param_a, &self.param_b] {
            if axis.candidates.len() < 2 {
                return Err(Error::Config(format!("stage {}: {} needs at least 2 candidates", self.name, axis.key)));
            }
            if !KNOWN_KEYS.contains(&axis.key.as_str()) {
                return Err(Error::Config(format!("stage {}: unknown parameter {}", self.name, axis.key)));
            }
        }
        if self.param_a.key == self.param_b.key {
            return Err(Error::Config(format!("stage {}: both axes tune {}", self.name, self.param_a.key)));
        }
        Ok(())
    }
}

const KNOWN_KEYS: [&str; 7] = [
    KEY_LEARNING_RATE,
    KEY_ATTN_DIM,
    KEY_HIDDEN_SIZE,
    KEY_HEAD_DROPOUT,
    KEY_ATTN_DROPOUT,
    KEY_LABEL_SMOOTHING,
    KEY_WEIGHT_DECAY,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    #[default]
    Grid,
    Random,
}

impl SearchMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchMethod::Grid => "grid",
            SearchMethod::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialOverrides {
    pub patience: usize,
    pub min_epochs: usize,
}

impl Default for TrialOverrides {
    fn default() -> Self {
        Self { patience: 10, min_epochs: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TuneConfig {
    pub method: SearchMethod,
    pub n_trials_per_stage: Option<usize>,
    pub seed: u64,
    /// Defaults to [`default_stages`] for the strategy.
    pub stages: Option<Vec<StageSpec>>,
    pub trial_overrides: TrialOverrides,
}

impl TuneConfig {
    pub fn resolved_stages(&self, strategy: Strategy) -> Vec<StageSpec> {
        self.stages.clone().unwrap_or_else(|| default_stages(strategy))
    }

    pub fn validate(&self, strategy: Strategy) -> Result<()> {
        if self.method == SearchMethod::Random && self.n_trials_per_stage.unwrap_or(0) == 0 {
            return Err(Error::Config("random search needs n_trials_per_stage >= 1".into()));
        }
        let stages = self.resolved_stages(strategy);
        if stages.is_empty() {
            return Err(Error::Config("at least one stage is required".into()));
        }
        stages.iter().try_for_each(StageSpec::validate)
    }

    /// Trials issued per stage under this config.
    pub fn trial_counts(&self, strategy: Strategy) -> Vec<usize> {
        self.resolved_stages(strategy)
            .iter()
            .map(|s| match self.method {
                SearchMethod::Grid => s.grid_size(),
                SearchMethod::Random => self.n_trials_per_stage.unwrap_or(0).min(s.grid_size()),
            })
            .collect()
    }
}

/// Three stages: learning rate with attention width (hidden width for
/// pooling), head with aggregator dropout, label smoothing with weight decay.
pub fn default_stages(strategy: Strategy) -> Vec<StageSpec> {
    let width_key = if strategy == Strategy::Pooling { KEY_HIDDEN_SIZE } else { KEY_ATTN_DIM };
    vec![
        StageSpec {
            name: "learning_rate_and_width".into(),
            param_a: ParamAxis::new(KEY_LEARNING_RATE, &[5e-5, 2e-4, 1e-3, 5e-3]),
            param_b: ParamAxis::new(width_key, &[64.0, 128.0, 256.0]),
        },
        StageSpec {
            name: "regularization".into(),
            param_a: ParamAxis::new(KEY_HEAD_DROPOUT, &[0.1, 0.3, 0.5, 0.6]),
            param_b: ParamAxis::new(KEY_ATTN_DROPOUT, &[0.05, 0.2, 0.4]),
        },
        StageSpec {
            name: "loss_and_decay".into(),
            param_a: ParamAxis::new(KEY_LABEL_SMOOTHING, &[0.0, 0.1, 0.2]),
            param_b: ParamAxis::new(KEY_WEIGHT_DECAY, &[1e-3, 1e-2, 1e-1]),
        },
    ]
}

/// Size of the full Cartesian product over every stage's parameters.
pub fn exhaustive_count(stages: &[StageSpec]) -> usize {
    stages.iter().map(StageSpec::grid_size).product()
}

/// `param_a` outer, `param_b` inner.
pub fn enumerate_grid(stage: &StageSpec) -> Vec<ConfigDelta> {
    let mut out = Vec::with_capacity(stage.grid_size());
    for &a in &stage.param_a.candidates {
        for &b in &stage.param_b.candidates {
            out.push(ConfigDelta::from([(stage.param_a.key.clone(), a), (stage.param_b.key.clone(), b)]));
        }
    }
    out
}

/// The first `n` cells of a partial Fisher-Yates shuffle of the grid,
/// seeded with `seed + stage_index`. Budgets covering the grid return it
/// unshuffled.
pub fn sample_random(stage: &StageSpec, n: usize, seed: u64, stage_index: usize) -> Vec<ConfigDelta> {
    let grid = enumerate_grid(stage);
    if n >= grid.len() {
        return grid;
    }
    let mut rng = SplitMix64::new(seed.wrapping_add(stage_index as u64));
    let mut idx: Vec<usize> = (0..grid.len()).collect();
    for i in 0..n {
        let j = i + rng.below((idx.len() - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx[..n].iter().map(|&i| grid[i].clone()).collect()
}

fn positive_int(key: &str, value: f64) -> Result<usize> {
    if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(Error::Config(format!("{key} must be a positive integer, got {value}")))
    }
}

/// Write one tuned value into the configs.
pub fn apply_param(train: &mut TrainConfig, model: &mut ModelConfig, key: &str, value: f64) -> Result<()> {
    match key {
        KEY_LEARNING_RATE => train.learning_rate = value,
        KEY_WEIGHT_DECAY => train.weight_decay = value,
        KEY_LABEL_SMOOTHING => train.label_smoothing = value,
        KEY_HEAD_DROPOUT => model.head.dropout = value,
        KEY_ATTN_DROPOUT => model.aggregator.attn_dropout = value,
        KEY_ATTN_DIM => {
            if !model.uses_attention() {
                return Err(Error::Config(format!("{} has no attention layer to size", model.strategy)));
            }
            model.aggregator.attn_dim = positive_int(key, value)?;
        }
        KEY_HIDDEN_SIZE => {
            let width = positive_int(key, value)?;
            if model.head.hidden_sizes.is_empty() {
                model.head.hidden_sizes.push(width);
            } else {
                model.head.hidden_sizes.iter_mut().for_each(|h| *h = width);
            }
        }
        other => return Err(Error::Config(format!("unknown tuning parameter {other}"))),
    }
    Ok(())
}

pub fn apply_delta(train: &mut TrainConfig, model: &mut ModelConfig, delta: &ConfigDelta) -> Result<()> {
    for (k, &v) in delta {
        apply_param(train, model, k, v)?;
    }
    train.validate()?;
    model.validate()
}

/// Allowlisted configuration values, for outcome baselines and winners.
pub fn config_values(train: &TrainConfig, model: &ModelConfig) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("learning_rate".into(), train.learning_rate.into());
    if model.uses_attention() {
        m.insert("attn_dim".into(), model.aggregator.attn_dim.into());
        m.insert("attn_dropout".into(), model.aggregator.attn_dropout.into());
    }
    m.insert("hidden_sizes".into(), model.head.hidden_sizes.clone().into());
    m.insert("head_dropout".into(), model.head.dropout.into());
    m.insert("label_smoothing".into(), train.label_smoothing.into());
    m.insert("weight_decay".into(), train.weight_decay.into());
    m.insert("epochs".into(), train.epochs.into());
    m.insert("batch_size".into(), train.batch_size.into());
    m.insert("optimizer".into(), serde_json::to_value(train.optimizer).expect("enum serializes"));
    m.insert("schedule".into(), serde_json::to_value(train.schedule).expect("enum serializes"));
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub stage_index: usize,
    pub trial_index: usize,
    pub delta: ConfigDelta,
    pub train: TrainConfig,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub val_auroc: f64,
    pub epochs_run: usize,
}

/// Runs one isolated trial from fresh model and optimizer state.
pub trait TrialRunner {
    fn run_trial(&mut self, trial: &TrialSpec) -> Result<TrialResult>;
}

/// Trials as in-process training runs on fixed splits.
pub struct InProcessRunner<'a> {
    pub splits: Splits<'a>,
}

impl TrialRunner for InProcessRunner<'_> {
    fn run_trial(&mut self, trial: &TrialSpec) -> Result<TrialResult> {
        let splits = Splits { test: None, ..self.splits };
        let out = run_training(&trial.train, &trial.model, splits, None, &mut |_| {})?;
        Ok(TrialResult { val_auroc: out.report.val.auroc, epochs_run: out.report.epochs_run })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub stage_index: usize,
    pub trial_index: usize,
    pub config_delta: ConfigDelta,
    pub val_auroc: Option<f64>,
    pub epochs_run: usize,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_train: TrainConfig,
    pub best_model: ModelConfig,
    /// Winning value of every tuned parameter.
    pub locked: ConfigDelta,
    pub trials: Vec<TrialRecord>,
    /// Validation AUROC of the final stage's winner.
    pub winning_metric: f64,
}

fn trial_note(model: &ModelConfig, delta: &ConfigDelta) -> Option<String> {
    (delta.contains_key(KEY_ATTN_DROPOUT) && !model.uses_attention())
        .then(|| format!("attn_dropout has no effect on the {} aggregator", model.strategy))
}

/// Run every stage in order. Failed trials score as negative infinity;
/// ties go to the lowest trial index.
pub fn run_tuning(
    tune: &TuneConfig,
    base_train: &TrainConfig,
    base_model: &ModelConfig,
    runner: &mut dyn TrialRunner,
) -> Result<TuneResult> {
    tune.validate(base_model.strategy)?;
    let (mut train, mut model) = (base_train.clone(), base_model.clone());
    let mut locked = ConfigDelta::new();
    let mut trials = Vec::new();
    let mut winning_metric = f64::NEG_INFINITY;

    for (stage_index, stage) in tune.resolved_stages(base_model.strategy).iter().enumerate() {
        let deltas = match tune.method {
            SearchMethod::Grid => enumerate_grid(stage),
            SearchMethod::Random => sample_random(stage, tune.n_trials_per_stage.unwrap_or(1), tune.seed, stage_index),
        };
        let mut best: Option<(f64, &ConfigDelta)> = None;
        let mut stage_records = Vec::with_capacity(deltas.len());
        for (trial_index, delta) in deltas.iter().enumerate() {
            let attempt = (|| {
                let (mut t, mut m) = (train.clone(), model.clone());
                apply_delta(&mut t, &mut m, delta)?;
                t.early_stop.patience = tune.trial_overrides.patience;
                t.early_stop.min_epochs = tune.trial_overrides.min_epochs;
                t.monitored_metric = MonitoredMetric::ValAuroc;
                runner.run_trial(&TrialSpec { stage_index, trial_index, delta: delta.clone(), train: t, model: m })
            })();
            let mut record = TrialRecord {
                stage_index,
                trial_index,
                config_delta: delta.clone(),
                val_auroc: None,
                epochs_run: 0,
                status: TrialStatus::Failed,
                error: None,
                note: trial_note(&model, delta),
            };
            match attempt {
                Ok(r) if r.val_auroc.is_finite() => {
                    record.val_auroc = Some(r.val_auroc);
                    record.epochs_run = r.epochs_run;
                    record.status = TrialStatus::Completed;
                    if best.is_none_or(|(b, _)| r.val_auroc > b) {
                        best = Some((r.val_auroc, delta));
                    }
                }
                Ok(r) => record.error = Some(format!("non-finite validation AUROC {}", r.val_auroc)),
                Err(e) => record.error = Some(e.to_string()),
            }
            stage_records.push(record);
        }
        let Some((metric, winner)) = best else {
            let statuses = stage_records
                .iter()
                .map(|r| format!("trial {}: {}", r.trial_index, r.error.as_deref().unwrap_or("failed")))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::StageFailed { stage: stage_index, statuses });
        };
        apply_delta(&mut train, &mut model, winner)?;
        locked.extend(winner.iter().map(|(k, &v)| (k.clone(), v)));
        winning_metric = metric;
        trials.extend(stage_records);
    }
    Ok(TuneResult { best_train: train, best_model: model, locked, trials, winning_metric })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub strategy: Strategy,
    pub method: SearchMethod,
    pub winning_values: Map<String, Value>,
    pub baseline_values: Map<String, Value>,
    pub winning_metric: f64,
    pub job_hash: String,
}

pub fn job_hash(job_id: &str) -> String {
    hex::encode(Sha256::digest(job_id.as_bytes()))
}

fn allowed_value(key: &str, value: &Value) -> bool {
    match key {
        "optimizer" => value.as_str().is_some_and(|s| ["adamw", "adam", "sgd"].contains(&s)),
        "schedule" => value.as_str().is_some_and(|s| ["cosine_warmup", "cosine", "step", "constant"].contains(&s)),
        "hidden_sizes" => value.as_array().is_some_and(|a| a.iter().all(Value::is_number)),
        _ => value.is_number(),
    }
}

fn filter(values: &Map<String, Value>) -> Map<String, Value> {
    values
        .iter()
        .filter(|(k, v)| OUTCOME_ALLOWLIST.contains(&k.as_str()) && allowed_value(k, v))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// Telemetry record with every non-allowlisted key dropped. Allowlisted keys
/// survive only with the value shape they are expected to have, so free text
/// cannot ride along under a permitted name.
pub fn anonymize_outcome(
    job_id: &str,
    strategy: Strategy,
    method: SearchMethod,
    winning: &Map<String, Value>,
    baseline: &Map<String, Value>,
    metric: f64,
) -> TuneOutcome {
    TuneOutcome {
        strategy,
        method,
        winning_values: filter(winning),
        baseline_values: filter(baseline),
        winning_metric: metric,
        job_hash: job_hash(job_id),
    }
}
