//! Orchestration service: sessions, job submission behind guardrails,
//! trainer child processes, log-driven metric ingestion, approval-gated
//! deployment and the read-only tuning-outcomes feed.

pub mod api;
pub mod docstore;
pub mod error;
pub mod guardrails;
pub mod ingest;
pub mod service;
pub mod types;
pub mod worker;

pub use error::{GuardrailRejection, OrchestratorError, Result};
pub use service::{Orchestrator, ServiceConfig};
