use std::path::PathBuf;

use serde::Serialize;

/// Why a job was refused before any process was launched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GuardrailRejection {
    pub message: String,
    /// `case_id/slide_id` of every cohort slide without features.
    pub missing_slides: Vec<String>,
    /// Classes with fewer than the minimum number of samples.
    pub classes_below_minimum: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("rejected: {}", .0.message)]
    Guardrail(GuardrailRejection),
    #[error("deployment requires explicit approval (approved must be true)")]
    ApprovalRequired,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error(transparent)]
    Core(#[from] slidemil::Error),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl OrchestratorError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Stable machine-readable code for API and CLI error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Self::NotFound(_) => "not_found",
            Self::Conflict(_) => "conflict",
            Self::Guardrail(_) => "guardrail_rejected",
            Self::ApprovalRequired => "approval_required",
            Self::BadRequest(_) | Self::Json(_) => "bad_request",
            Self::Unauthorized => "unauthorized",
            Self::Core(slidemil::Error::Integrity(_)) => "integrity",
            Self::Core(slidemil::Error::Config(_)) => "bad_request",
            Self::Core(_) | Self::Io { .. } => "internal",
        }
    }
}

pub type Result<T, E = OrchestratorError> = std::result::Result<T, E>;
