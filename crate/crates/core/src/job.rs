//! Job configuration shared by the trainer process and in-process runs:
//! where the data comes from, how it is split, and what to train.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{fold_summary, MetricSet};
use crate::model::{ModelConfig, Strategy};
use crate::split::{stratified_kfold, stratified_split, SplitPolicy};
use crate::store::{generate_synthetic, CohortSpec, FeatureStore, PatchFeatureBag, SyntheticSpec};
use crate::train::{run_training, Splits, TrainConfig, TrainerEvent, TrainingOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Store { store_dir: PathBuf, cohort: CohortSpec },
    Synthetic { spec: SyntheticSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJobConfig {
    pub data: DataSource,
    pub strategy: Strategy,
    /// Full model override; defaults to the strategy's standard config.
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub split_seed: u64,
    /// Where checkpoints go. No checkpoints are written when absent.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Leave the test split untouched (used by tuning trials).
    #[serde(default)]
    pub skip_test: bool,
}

impl TrainJobConfig {
    pub fn new(data: DataSource, strategy: Strategy) -> Self {
        Self {
            data,
            strategy,
            model: None,
            train: TrainConfig::default(),
            split_seed: 0,
            output_dir: None,
            skip_test: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CohortData {
    pub class_names: Vec<String>,
    pub bags: Vec<PatchFeatureBag>,
}

impl CohortData {
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.bags
            .iter()
            .map(|b| b.label.ok_or_else(|| Error::MissingLabels(format!("{}/{}", b.case_id, b.slide_id))))
            .collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.bags.first().map_or(0, PatchFeatureBag::feature_dim)
    }
}

pub fn load_data(source: &DataSource) -> Result<CohortData> {
    match source {
        DataSource::Synthetic { spec } => {
            Ok(CohortData { class_names: spec.class_names(), bags: generate_synthetic(spec)? })
        }
        DataSource::Store { store_dir, cohort } => {
            let store = FeatureStore::open(store_dir)?;
            Ok(CohortData { class_names: cohort.class_names.clone(), bags: store.load_cohort(cohort)? })
        }
    }
}

/// Model config for a job: the explicit override, or the strategy default
/// for the cohort's classes and feature width.
pub fn resolve_model(cfg: &TrainJobConfig, data: &CohortData) -> Result<ModelConfig> {
    let model = match &cfg.model {
        Some(m) => m.clone(),
        None => ModelConfig::for_strategy(cfg.strategy, data.class_names.clone(), data.feature_dim()),
    };
    if model.strategy != cfg.strategy {
        return Err(Error::Config(format!("model config is {}, job asks for {}", model.strategy, cfg.strategy)));
    }
    if model.class_labels != data.class_names || model.feature_dim != data.feature_dim() {
        return Err(Error::Config("model config does not match the cohort's classes or feature width".into()));
    }
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct PreparedSplits {
    pub policy: SplitPolicy,
    pub train: Vec<PatchFeatureBag>,
    pub val: Vec<PatchFeatureBag>,
    pub test: Vec<PatchFeatureBag>,
}

impl PreparedSplits {
    pub fn as_splits(&self, with_test: bool) -> Splits<'_> {
        Splits {
            train: &self.train,
            val: &self.val,
            test: (with_test && !self.test.is_empty()).then_some(self.test.as_slice()),
        }
    }
}

pub fn prepare_splits(data: &CohortData, split_seed: u64) -> Result<PreparedSplits> {
    let labels = data.labels()?;
    let a = stratified_split(&labels, data.class_names.len(), split_seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| data.bags[i].clone()).collect();
    Ok(PreparedSplits { policy: a.policy_applied, train: pick(&a.train), val: pick(&a.val), test: pick(&a.test) })
}

/// Load, split and train as described by `cfg`.
pub fn run_train_job(cfg: &TrainJobConfig, emit: &mut dyn FnMut(&TrainerEvent)) -> Result<TrainingOutcome> {
    let data = load_data(&cfg.data)?;
    let model = resolve_model(cfg, &data)?;
    let splits = prepare_splits(&data, cfg.split_seed)?;
    run_training(&cfg.train, &model, splits.as_splits(!cfg.skip_test), cfg.output_dir.as_deref(), emit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    /// Best-checkpoint validation metrics per fold.
    pub folds: Vec<MetricSet>,
    pub mean: MetricSet,
    pub std: MetricSet,
}

/// Stratified k-fold over the given bags (callers pass train+val, never
/// the test split).
pub fn cross_validate(
    train_cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    bags: &[PatchFeatureBag],
    k: usize,
    seed: u64,
) -> Result<CrossValidation> {
    let data = CohortData { class_names: model_cfg.class_labels.clone(), bags: bags.to_vec() };
    let labels = data.labels()?;
    let folds = stratified_kfold(&labels, model_cfg.n_classes(), k, seed)?;
    let mut results = Vec::with_capacity(k);
    for fold in &folds {
        let pick = |idx: &[usize]| idx.iter().map(|&i| bags[i].clone()).collect::<Vec<_>>();
        let (train, val) = (pick(&fold.train), pick(&fold.val));
        let outcome = run_training(train_cfg, model_cfg, Splits { train: &train, val: &val, test: None }, None, &mut |_| {})?;
        results.push(outcome.report.val);
    }
    let summarize = |f: fn(&MetricSet) -> f64| fold_summary(&results.iter().map(f).collect::<Vec<_>>());
    let fields: [fn(&MetricSet) -> f64; 6] =
        [|m| m.auroc, |m| m.pr_auc, |m| m.balanced_accuracy, |m| m.macro_f1, |m| m.macro_precision, |m| m.accuracy];
    let stats: Vec<(f64, f64)> = fields.iter().map(|&f| summarize(f)).collect();
    let build = |pick: fn(&(f64, f64)) -> f64| MetricSet {
        auroc: pick(&stats[0]),
        pr_auc: pick(&stats[1]),
        balanced_accuracy: pick(&stats[2]),
        macro_f1: pick(&stats[3]),
        macro_precision: pick(&stats[4]),
        accuracy: pick(&stats[5]),
    };
    Ok(CrossValidation { folds: results, mean: build(|s| s.0), std: build(|s| s.1) })
}
