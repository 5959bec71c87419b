//! Blocking HTTP client for the orchestration API.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use slidemil::tuner::TuneOutcome;
use slidemil_orchestrator::types::{ComparisonTable, DeployRequest, DeploymentRecord, JobKind, JobRecord, MetricEvent};
use ureq::Agent;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{code}: {message}")]
    Api { status: u16, code: String, message: String, body: Value },
    #[error("cannot reach {url}: {message}")]
    Transport { url: String, message: String },
    #[error("unexpected response from {url}: {message}")]
    Decode { url: String, message: String },
}

impl ClientError {
    pub fn code(&self) -> &str {
        match self {
            ClientError::Api { code, .. } => code,
            ClientError::Transport { .. } => "unreachable",
            ClientError::Decode { .. } => "bad_response",
        }
    }
}

pub struct ApiClient {
    base: String,
    token: Option<String>,
    agent: Agent,
}

impl ApiClient {
    pub fn new(base: &str, token: Option<String>) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Self { base: base.trim_end_matches('/').to_owned(), token, agent }
    }

    fn send<T: DeserializeOwned>(&self, method: &str, path: &str, body: Option<&Value>) -> Result<T, ClientError> {
        let url = format!("{}{path}", self.base);
        let transport = |e: ureq::Error| ClientError::Transport { url: url.clone(), message: e.to_string() };
        let auth = self.token.as_ref().map(|t| format!("Bearer {t}"));
        let result = match method {
            "GET" => self.agent.get(&url).call(),
            _ => {
                let mut req = self.agent.post(&url);
                if let Some(a) = &auth {
                    req = req.header("Authorization", a);
                }
                match body {
                    Some(b) => req.send_json(b),
                    None => req.send_empty(),
                }
            }
        };
        let mut resp = result.map_err(transport)?;
        let status = resp.status().as_u16();
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::Decode { url: url.clone(), message: e.to_string() })?;
        if status >= 400 {
            let field = |k: &str| value.get(k).and_then(Value::as_str).unwrap_or("").to_owned();
            return Err(ClientError::Api { status, code: field("error"), message: field("message"), body: value });
        }
        serde_json::from_value(value).map_err(|e| ClientError::Decode { url, message: e.to_string() })
    }

    pub fn create_session(&self) -> Result<String, ClientError> {
        let v: Value = self.send("POST", "/sessions", None)?;
        Ok(v["session_id"].as_str().unwrap_or_default().to_owned())
    }

    pub fn submit(&self, session_id: &str, kind: JobKind, config: &impl Serialize) -> Result<JobRecord, ClientError> {
        let config = serde_json::to_value(config).map_err(|e| ClientError::Decode { url: self.base.clone(), message: e.to_string() })?;
        self.send("POST", "/jobs", Some(&json!({ "session_id": session_id, "kind": kind, "config": config })))
    }

    pub fn job(&self, job_id: &str) -> Result<JobRecord, ClientError> {
        self.send("GET", &format!("/jobs/{job_id}"), None)
    }

    pub fn jobs(&self, session_id: Option<&str>) -> Result<Vec<JobRecord>, ClientError> {
        let query = session_id.map(|s| format!("?session_id={s}")).unwrap_or_default();
        self.send("GET", &format!("/jobs{query}"), None)
    }

    pub fn metrics(&self, job_id: &str, since_epoch: Option<usize>) -> Result<Vec<MetricEvent>, ClientError> {
        let query = since_epoch.map(|e| format!("?since_epoch={e}")).unwrap_or_default();
        self.send("GET", &format!("/jobs/{job_id}/metrics{query}"), None)
    }

    pub fn stop(&self, job_id: &str) -> Result<JobRecord, ClientError> {
        self.send("POST", &format!("/jobs/{job_id}/stop"), None)
    }

    pub fn comparison(&self, job_id: &str) -> Result<ComparisonTable, ClientError> {
        self.send("GET", &format!("/jobs/{job_id}/comparison"), None)
    }

    pub fn deploy(&self, req: &DeployRequest) -> Result<DeploymentRecord, ClientError> {
        let body = serde_json::to_value(req).map_err(|e| ClientError::Decode { url: self.base.clone(), message: e.to_string() })?;
        self.send("POST", "/deployments", Some(&body))
    }

    pub fn deployment(&self, widget_id: &str) -> Result<DeploymentRecord, ClientError> {
        self.send("GET", &format!("/deployments/{widget_id}"), None)
    }

    pub fn tuning_outcomes(&self) -> Result<Vec<TuneOutcome>, ClientError> {
        self.send("GET", "/tuning-outcomes", None)
    }
}
