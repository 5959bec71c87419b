//! Sharded on-disk store of pre-extracted patch features.
//!
//! A store directory holds `index.json` (the routing index) and
//! `shard_NN.fsb` container files. Cases are routed to shards by FNV-1a
//! hash of the case id, so loading a cohort only opens the shards its
//! members live in.

mod collate;
mod index;
mod shard;
mod synth;

pub use collate::{collate, Batch};
pub(crate) use collate::collate_refs;
pub use index::{
    validate_features, write_store, CaseEntry, CohortMember, CohortSpec, FeatureStore, RoutingIndex,
    SlideRef, ValidationReport, INDEX_FILE, MIN_SAMPLES_PER_CLASS,
};
pub use shard::{shard_file_name, shard_for_case, ShardFile, SlideLocation, SHARD_MAGIC};
pub use synth::{generate_synthetic, SyntheticSpec};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Default patch embedding width.
pub const DEFAULT_FEATURE_DIM: usize = 1024;
/// Default number of shard files.
pub const DEFAULT_SHARD_COUNT: usize = 16;

/// One slide's patch features: a `P x D` matrix plus identity and optional label.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureBag {
    pub case_id: String,
    pub slide_id: String,
    pub features: Array2<f32>,
    pub label: Option<usize>,
}

impl PatchFeatureBag {
    pub fn new(case_id: impl Into<String>, slide_id: impl Into<String>, features: Array2<f32>) -> Self {
        Self { case_id: case_id.into(), slide_id: slide_id.into(), features, label: None }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn patch_count(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Checks the bag invariants: at least one patch, expected width, finite values.
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if self.patch_count() == 0 {
            return Err(Error::Shape(format!("bag {}/{} has no patches", self.case_id, self.slide_id)));
        }
        if self.feature_dim() != feature_dim {
            return Err(Error::DimensionMismatch { expected: feature_dim, found: self.feature_dim() });
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                tensor: format!("features[{}/{}]", self.case_id, self.slide_id),
                message: "non-finite feature value".into(),
            });
        }
        Ok(())
    }
}
