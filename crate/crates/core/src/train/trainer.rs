use std::path::Path;

use ndarray::{Array2, Axis};

use super::augment::patch_dropout;
use super::checkpoint::{save_checkpoint, CheckpointRecord};
use super::config::TrainConfig;
use super::early_stop::{early_stop_check, ImprovementTracker, StopDecision};
use super::events::{EpochMetrics, FinalReport, RunState, SplitName, StopReason, TrainerEvent};
use super::optim::{optimizer_step, OptimizerState};
use super::sampler::build_sampler;
use super::schedule::lr_at;
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, skipped_classes, MetricSet};
use crate::model::{forward, init_params, loss_and_grads, LossConfig, Mode, ModelConfig, ModelParams};
use crate::rng::substream_seed;
use crate::store::{collate, collate_refs, PatchFeatureBag};

#[derive(Debug, Clone, Copy)]
pub struct Splits<'a> {
    pub train: &'a [PatchFeatureBag],
    pub val: &'a [PatchFeatureBag],
    pub test: Option<&'a [PatchFeatureBag]>,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub history: Vec<EpochMetrics>,
    pub best: CheckpointRecord,
    pub report: FinalReport,
}

/// Eval-mode outputs for a list of bags, in input order.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    /// Per-bag attention over real patches, for attention models.
    pub attention: Vec<Option<Vec<f64>>>,
}

pub fn predict_bags(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    bags: &[&PatchFeatureBag],
    batch_size: usize,
) -> Result<Predictions> {
    let c = config.n_classes();
    let mut logits = Array2::zeros((bags.len(), c));
    let mut probs = Array2::zeros((bags.len(), c));
    let mut attention = Vec::with_capacity(bags.len());
    for (chunk_index, chunk) in bags.chunks(batch_size.max(1)).enumerate() {
        let batch = collate_refs(chunk)?;
        let out = forward(params, config, &batch, Mode::Eval, 0)?;
        let start = chunk_index * batch_size.max(1);
        for b in 0..chunk.len() {
            logits.row_mut(start + b).assign(&out.logits.row(b).mapv(f64::from));
            probs.row_mut(start + b).assign(&out.probs.row(b).mapv(f64::from));
            attention.push(
                out.attention.as_ref().map(|a| a.row(b).iter().take(batch.lengths[b]).map(|&v| f64::from(v)).collect()),
            );
        }
    }
    Ok(Predictions { logits, probs, attention })
}

/// Mean cross-entropy against label-smoothed targets, from logits.
pub fn smoothed_cross_entropy(logits: &Array2<f64>, labels: &[usize], label_smoothing: f64) -> f64 {
    let c = logits.ncols() as f64;
    let total: f64 = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(row, &label)| {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter()
                .enumerate()
                .map(|(k, &v)| {
                    let target = if k == label { 1.0 - label_smoothing } else { 0.0 } + label_smoothing / c;
                    -target * (v - lse)
                })
                .sum::<f64>()
        })
        .sum();
    total / labels.len() as f64
}

fn split_labels(bags: &[PatchFeatureBag], split: &str, n_classes: usize) -> Result<Vec<usize>> {
    bags.iter()
        .map(|b| match b.label {
            None => Err(Error::MissingLabels(format!("{split} bag {}/{} has no label", b.case_id, b.slide_id))),
            Some(l) if l >= n_classes => Err(Error::Config(format!("label {l} out of range for {n_classes} classes"))),
            Some(l) => Ok(l),
        })
        .collect()
}

struct Evaluated {
    loss: f64,
    metrics: MetricSet,
    skipped: Vec<usize>,
}

fn evaluate(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    bags: &[PatchFeatureBag],
    labels: &[usize],
    train_cfg: &TrainConfig,
) -> Result<Evaluated> {
    let refs: Vec<&PatchFeatureBag> = bags.iter().collect();
    let p = predict_bags(params, config, &refs, train_cfg.batch_size)?;
    Ok(Evaluated {
        loss: smoothed_cross_entropy(&p.logits, labels, train_cfg.label_smoothing),
        metrics: compute_metrics(p.probs.view(), labels)?,
        skipped: skipped_classes(config.n_classes(), labels),
    })
}

struct Best {
    epoch: usize,
    value: f64,
    params: ModelParams<f32>,
    optimizer: OptimizerState<f32>,
    val: MetricSet,
}

/// The training loop. Emits one event per (epoch, split), checkpoints on
/// every improvement beyond the threshold, and evaluates the test split
/// once with the best weights. Identical inputs give identical events and
/// checkpoints.
pub fn run_training(
    train_cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    splits: Splits<'_>,
    checkpoint_dir: Option<&Path>,
    emit: &mut dyn FnMut(&TrainerEvent),
) -> Result<TrainingOutcome> {
    train_cfg.validate()?;
    model_cfg.validate()?;
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(Error::Config("train and val splits must be non-empty".into()));
    }
    let n_classes = model_cfg.n_classes();
    let train_labels = split_labels(splits.train, "train", n_classes)?;
    let val_labels = split_labels(splits.val, "val", n_classes)?;
    let test_labels = splits.test.map(|t| split_labels(t, "test", n_classes)).transpose()?;
    for (c, name) in model_cfg.class_labels.iter().enumerate() {
        if !train_labels.contains(&c) {
            return Err(Error::EmptyClass(format!("class {name} has no training samples")));
        }
    }
    for bag in splits.train.iter().chain(splits.val).chain(splits.test.unwrap_or_default()) {
        bag.validate(model_cfg.feature_dim)?;
    }

    let seed = train_cfg.seed;
    let mut params = init_params::<f32>(model_cfg, substream_seed(seed, "init", 0));
    let mut optimizer = OptimizerState::new(train_cfg.optimizer);
    let loss_cfg = LossConfig { label_smoothing: train_cfg.label_smoothing };
    let monitored = train_cfg.monitored_metric;
    let digest = train_cfg.digest();
    let mut tracker = ImprovementTracker::new(train_cfg.early_stop.improvement_threshold);
    let mut best: Option<Best> = None;
    let mut history = Vec::new();
    let mut decision = StopDecision::Continue;

    emit(&TrainerEvent::Status {
        state: RunState::Running,
        message: format!(
            "{} strategy, {} train / {} val bags, {} epochs",
            model_cfg.strategy,
            splits.train.len(),
            splits.val.len(),
            train_cfg.epochs
        ),
    });

    let mut epochs_run = 0;
    for epoch in 0..train_cfg.epochs {
        let e = epoch as u64;
        let lr = lr_at(train_cfg.schedule, train_cfg.learning_rate, epoch, train_cfg.epochs);
        let plan = build_sampler(&train_labels, train_cfg.imbalance_threshold, substream_seed(seed, "sampler", e))?;
        let dropout_root = substream_seed(seed, "patch_dropout", e);
        let batch_root = substream_seed(seed, "dropout", e);

        let mut loss_sum = 0.0;
        for (bi, chunk) in plan.order.chunks(train_cfg.batch_size).enumerate() {
            let bags: Vec<PatchFeatureBag> = chunk
                .iter()
                .map(|&i| {
                    let slide_seed = substream_seed(dropout_root, "slide", i as u64);
                    patch_dropout(&splits.train[i], train_cfg.patch_dropout, slide_seed, Mode::Train)
                })
                .collect();
            let batch = collate(&bags)?;
            let out = loss_and_grads(
                &params,
                model_cfg,
                &batch,
                &loss_cfg,
                Mode::Train,
                substream_seed(batch_root, "batch", bi as u64),
            )?;
            loss_sum += f64::from(out.loss) * chunk.len() as f64;
            optimizer_step(&mut optimizer, &mut params, &out.grads, lr, train_cfg.weight_decay)?;
        }

        // Train-split loss is the optimized objective; its metrics come from
        // a clean eval-mode pass like the validation split.
        let train_eval = evaluate(&params, model_cfg, splits.train, &train_labels, train_cfg)?;
        let val_eval = evaluate(&params, model_cfg, splits.val, &val_labels, train_cfg)?;
        let mut train_row =
            EpochMetrics::new(epoch, SplitName::Train, loss_sum / plan.order.len() as f64, train_eval.metrics, lr);
        train_row.skipped_classes = train_eval.skipped;
        let mut val_row = EpochMetrics::new(epoch, SplitName::Val, val_eval.loss, val_eval.metrics, lr);
        val_row.skipped_classes = val_eval.skipped;
        for row in [train_row, val_row] {
            emit(&TrainerEvent::Epoch(row.clone()));
            history.push(row);
        }
        epochs_run = epoch + 1;

        let value = monitored.pick(&val_eval.metrics);
        if tracker.observe(epoch, value) {
            let b = Best { epoch, value, params: params.clone(), optimizer: optimizer.clone(), val: val_eval.metrics };
            if let Some(dir) = checkpoint_dir {
                save_checkpoint(&record(model_cfg, &b, &digest), dir)?;
            }
            best = Some(b);
        }

        decision = early_stop_check(&history, &train_cfg.early_stop, monitored);
        if decision != StopDecision::Continue {
            break;
        }
    }

    let best = best.expect("at least one epoch ran");
    let test = match (splits.test, &test_labels) {
        (Some(bags), Some(labels)) if !bags.is_empty() => {
            Some(evaluate(&best.params, model_cfg, bags, labels, train_cfg)?.metrics)
        }
        _ => None,
    };
    let report = FinalReport {
        best_epoch: best.epoch,
        best_metric_value: best.value,
        monitored: monitored.name().to_owned(),
        stop_reason: StopReason::from(decision),
        epochs_run,
        val: best.val,
        test,
    };
    emit(&TrainerEvent::Final(report.clone()));
    Ok(TrainingOutcome { history, best: record(model_cfg, &best, &digest), report })
}

fn record(model_cfg: &ModelConfig, best: &Best, digest: &str) -> CheckpointRecord {
    CheckpointRecord {
        model_config: model_cfg.clone(),
        weights: best.params.clone(),
        optimizer_state: best.optimizer.clone(),
        best_epoch: best.epoch,
        best_metric_value: best.value,
        train_config_digest: digest.to_owned(),
    }
}
