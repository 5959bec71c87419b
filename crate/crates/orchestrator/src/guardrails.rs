//! Pre-launch checks. A job that fails any of these never starts a process.

use std::path::Path;

use slidemil::job::DataSource;
use slidemil::store::{validate_features, RoutingIndex, MIN_SAMPLES_PER_CLASS};

use crate::error::{GuardrailRejection, OrchestratorError, Result};

fn reject(message: String, missing_slides: Vec<String>, classes_below_minimum: Vec<String>) -> OrchestratorError {
    OrchestratorError::Guardrail(GuardrailRejection { message, missing_slides, classes_below_minimum })
}

/// Make a relative store directory absolute against the service default.
pub fn resolve_data(data: &mut DataSource, default_store: Option<&Path>) {
    if let (DataSource::Store { store_dir, .. }, Some(root)) = (data, default_store) {
        if store_dir.is_relative() {
            *store_dir = root.join(&*store_dir);
        }
    }
}

/// Every cohort slide must have features and every class at least
/// [`MIN_SAMPLES_PER_CLASS`] samples.
pub fn check_data(data: &DataSource) -> Result<()> {
    match data {
        DataSource::Synthetic { spec } => {
            spec.validate()?;
            let below: Vec<String> = spec
                .class_names()
                .into_iter()
                .zip(&spec.n_cases_per_class)
                .filter(|(_, &n)| n < MIN_SAMPLES_PER_CLASS)
                .map(|(name, _)| name)
                .collect();
            if !below.is_empty() {
                return Err(reject(
                    format!("fewer than {MIN_SAMPLES_PER_CLASS} samples in class(es): {}", below.join(", ")),
                    Vec::new(),
                    below,
                ));
            }
            Ok(())
        }
        DataSource::Store { store_dir, cohort } => {
            cohort.validate()?;
            let index = RoutingIndex::load(store_dir)
                .map_err(|e| reject(format!("feature store unavailable: {e}"), Vec::new(), Vec::new()))?;
            let report = validate_features(&index, cohort);
            if !report.missing.is_empty() {
                let slides: Vec<String> = report.missing.iter().map(ToString::to_string).collect();
                return Err(reject(format!("missing features for: {}", slides.join(", ")), slides, Vec::new()));
            }
            if !report.below_minimum.is_empty() {
                let detail: Vec<String> = report
                    .below_minimum
                    .iter()
                    .map(|c| format!("{c} ({})", report.per_class_counts.get(c).copied().unwrap_or(0)))
                    .collect();
                return Err(reject(
                    format!("fewer than {MIN_SAMPLES_PER_CLASS} samples in class(es): {}", detail.join(", ")),
                    Vec::new(),
                    report.below_minimum,
                ));
            }
            Ok(())
        }
    }
}
