//! Training engine: schedules, sampling, augmentation, optimizers, early
//! stopping, checkpoints and the epoch loop.

mod augment;
mod checkpoint;
mod config;
mod early_stop;
mod events;
mod optim;
mod sampler;
mod schedule;
mod trainer;

pub use augment::patch_dropout;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointManifest, CheckpointRecord,
    OptimizerManifest, TensorEntry, CHECKPOINT_BLOB, CHECKPOINT_FORMAT, CHECKPOINT_MANIFEST,
};
pub use config::{EarlyStopConfig, MonitoredMetric, OptimizerKind, Schedule, TrainConfig};
pub use early_stop::{early_stop_check, ImprovementTracker, StopDecision};
pub use events::{
    parse_trainer_line, EpochMetrics, FinalReport, RunState, SplitName, StopReason, TrainerEvent, LINE_PREFIX,
};
pub use optim::{optimizer_step, OptimizerState, BETA1, BETA2, EPS};
pub use sampler::{build_sampler, imbalance_ratio, SamplePlan};
pub use schedule::{lr_at, warmup_len, STEP_FACTOR, WARMUP_START};
pub use trainer::{predict_bags, run_training, smoothed_cross_entropy, Predictions, Splits, TrainingOutcome};
