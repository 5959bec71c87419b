//! Multiple-instance learning over pre-extracted whole-slide patch features.
//!
//! - [`store`]: sharded feature store, synthetic cohorts, bag collation
//! - [`model`]: pooling, ABMIL, CLAM and LoRA classifiers with analytic gradients
//! - [`train`]: schedules, sampling, optimizers, early stopping, checkpoints, the training loop
//! - [`metrics`] and [`split`]: macro metrics, stratified splits and k-fold
//! - [`tuner`]: staged pairwise hyperparameter search
//! - [`deploy`]: artifact packaging, model reload and inference

pub mod deploy;
pub mod error;
pub mod job;
pub mod model;
pub mod rng;
pub mod metrics;
pub mod split;
pub mod store;
pub mod train;
pub mod tuner;

pub use error::{Error, Result};
