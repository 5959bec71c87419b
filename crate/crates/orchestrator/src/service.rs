//! Service logic behind the HTTP API: job lifecycle, process management,
//! log polling and deployment.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::process::{Child, Stdio};
use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

use chrono::Utc;
use serde_json::Value;
use slidemil::deploy::package_artifacts;
use slidemil::job::TrainJobConfig;
use slidemil::metrics::MetricSet;
use slidemil::model::Strategy;
use slidemil::train::{RunState, TrainerEvent};
use slidemil::tuner::{anonymize_outcome, config_values, job_hash, TuneOutcome};
use uuid::Uuid;

use crate::docstore::DocumentStore;
use crate::error::{OrchestratorError, Result};
use crate::guardrails::{check_data, resolve_data};
use crate::ingest::{parse_log_chunk, upsert_metric};
use crate::types::*;
use crate::worker::{WorkerCommand, TUNE_RESULT_FILE};

const JOBS: &str = "jobs";
const SESSIONS: &str = "sessions";
const METRICS: &str = "metrics";
const CURSORS: &str = "cursors";
const DEPLOYMENTS: &str = "deployments";
const OUTCOMES: &str = "tuning_outcomes";

/// Terms that would reveal model internals in user-facing deployment text.
const ARCHITECTURE_TERMS: [&str; 9] =
    ["aggregator", "attn", "attention_dim", "dropout", "hidden", "abmil", "meanmax", "lora", "clam"];

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Documents and per-job working directories.
    pub data_dir: PathBuf,
    pub log_dir: PathBuf,
    pub artifact_dir: PathBuf,
    /// Base for relative store directories in job configs.
    pub store_dir: Option<PathBuf>,
    pub poll_interval: Duration,
    pub max_concurrent: usize,
    /// Bearer token required on mutating endpoints when set.
    pub auth_token: Option<String>,
    pub worker: WorkerCommand,
}

impl ServiceConfig {
    /// All directories under `root`, default 30 s polling.
    pub fn under(root: &Path, worker: WorkerCommand) -> Self {
        Self {
            data_dir: root.join("data"),
            log_dir: root.join("logs"),
            artifact_dir: root.join("artifacts"),
            store_dir: None,
            poll_interval: Duration::from_secs(30),
            max_concurrent: std::thread::available_parallelism().map_or(1, |n| n.get()),
            auth_token: None,
            worker,
        }
    }
}

pub struct Orchestrator {
    cfg: ServiceConfig,
    docs: DocumentStore,
    /// Live trainer processes; every job document mutation happens under
    /// this lock.
    procs: Mutex<HashMap<String, Child>>,
    poll: Mutex<()>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn architecture_free(text: &str) -> bool {
    let lower = text.to_lowercase();
    !ARCHITECTURE_TERMS.iter().any(|t| lower.contains(t))
}

fn has_architecture_keys(value: &Value) -> bool {
    match value {
        Value::Object(map) => map.iter().any(|(k, v)| !architecture_free(k) || has_architecture_keys(v)),
        Value::Array(items) => items.iter().any(has_architecture_keys),
        _ => false,
    }
}

fn summary(prefix: &str, m: &MetricSet, out: &mut BTreeMap<String, f64>) {
    for (name, value) in [
        ("auroc", m.auroc),
        ("pr_auc", m.pr_auc),
        ("balanced_accuracy", m.balanced_accuracy),
        ("macro_f1", m.macro_f1),
        ("macro_precision", m.macro_precision),
        ("accuracy", m.accuracy),
    ] {
        out.insert(format!("{prefix}_{name}"), value);
    }
}

impl Orchestrator {
    pub fn new(cfg: ServiceConfig) -> Result<Self> {
        for dir in [&cfg.data_dir, &cfg.log_dir, &cfg.artifact_dir] {
            fs::create_dir_all(dir).map_err(|e| OrchestratorError::io(dir, e))?;
        }
        let docs = DocumentStore::open(cfg.data_dir.join("db"))?;
        Ok(Self { cfg, docs, procs: Mutex::new(HashMap::new()), poll: Mutex::new(()) })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn log_path(&self, job_id: &str) -> PathBuf {
        self.cfg.log_dir.join(format!("{job_id}.log"))
    }

    pub fn job_dir(&self, job_id: &str) -> PathBuf {
        self.cfg.data_dir.join("jobs").join(job_id)
    }

    /// Where a job's checkpoints (or tuning results) are written.
    pub fn output_dir(&self, job_id: &str) -> PathBuf {
        self.job_dir(job_id).join("output")
    }

    pub fn create_session(&self) -> Result<SessionRecord> {
        let rec = SessionRecord { session_id: Uuid::new_v4().to_string(), created_at: Utc::now() };
        self.docs.put(SESSIONS, &rec.session_id, &rec)?;
        Ok(rec)
    }

    pub fn get_job(&self, job_id: &str) -> Result<JobRecord> {
        self.docs.get(JOBS, job_id)?.ok_or_else(|| OrchestratorError::NotFound(format!("job {job_id}")))
    }

    pub fn list_jobs(&self, session_id: Option<&str>) -> Result<Vec<JobRecord>> {
        let mut jobs: Vec<JobRecord> = self.docs.list(JOBS)?;
        jobs.retain(|j| session_id.is_none_or(|s| j.session_id == s));
        jobs.sort_by(|a, b| (a.created_at, &a.job_id).cmp(&(b.created_at, &b.job_id)));
        Ok(jobs)
    }

    pub fn metrics(&self, job_id: &str, since_epoch: Option<usize>) -> Result<Vec<MetricEvent>> {
        self.get_job(job_id)?;
        let mut events: Vec<MetricEvent> = self.docs.get(METRICS, job_id)?.unwrap_or_default();
        events.retain(|e| since_epoch.is_none_or(|s| e.epoch >= s));
        Ok(events)
    }

    pub fn cursor(&self, job_id: &str) -> Result<LogCursor> {
        Ok(self.docs.get(CURSORS, job_id)?.unwrap_or_else(|| LogCursor { job_id: job_id.into(), ..Default::default() }))
    }

    fn new_record(&self, session_id: &str, kind: JobKind, config: Value, strategy: Option<Strategy>) -> JobRecord {
        JobRecord {
            job_id: Uuid::new_v4().to_string(),
            session_id: session_id.into(),
            kind,
            state: JobState::Queued,
            config,
            created_at: Utc::now(),
            started_at: None,
            ended_at: None,
            error: None,
            child_ids: Vec::new(),
            parent_id: None,
            strategy,
            report: None,
            warnings: Vec::new(),
        }
    }

    fn parse<T: serde::de::DeserializeOwned>(kind: JobKind, config: Value) -> Result<T> {
        serde_json::from_value(config).map_err(|e| OrchestratorError::BadRequest(format!("invalid {kind:?} config: {e}")))
    }

    fn check_train(&self, cfg: &mut TrainJobConfig) -> Result<()> {
        resolve_data(&mut cfg.data, self.cfg.store_dir.as_deref());
        cfg.train.validate()?;
        if let Some(model) = &cfg.model {
            model.validate()?;
        }
        check_data(&cfg.data)
    }

    /// Validate, run guardrails, persist and launch. Nothing is written and
    /// no process is started for a rejected job.
    pub fn submit_job(&self, req: SubmitRequest) -> Result<JobRecord> {
        if self.docs.get::<SessionRecord>(SESSIONS, &req.session_id)?.is_none() {
            return Err(OrchestratorError::NotFound(format!("session {}", req.session_id)));
        }
        let mut records = Vec::new();
        match req.kind {
            JobKind::Train => {
                let mut cfg: TrainJobConfig = Self::parse(req.kind, req.config)?;
                self.check_train(&mut cfg)?;
                let rec = self.new_record(&req.session_id, req.kind, Value::Null, Some(cfg.strategy));
                cfg.output_dir = Some(self.output_dir(&rec.job_id));
                records.push(JobRecord { config: serde_json::to_value(&cfg)?, ..rec });
            }
            JobKind::Tune => {
                let mut cfg: TuneJobConfig = Self::parse(req.kind, req.config)?;
                self.check_train(&mut cfg.job)?;
                cfg.tune.validate(cfg.job.strategy)?;
                let rec = self.new_record(&req.session_id, req.kind, Value::Null, Some(cfg.job.strategy));
                cfg.job.output_dir = Some(self.output_dir(&rec.job_id));
                records.push(JobRecord { config: serde_json::to_value(&cfg)?, ..rec });
            }
            JobKind::Compare => {
                let mut cfg: CompareJobConfig = Self::parse(req.kind, req.config)?;
                resolve_data(&mut cfg.data, self.cfg.store_dir.as_deref());
                cfg.train.validate()?;
                check_data(&cfg.data)?;
                let mut parent = self.new_record(&req.session_id, req.kind, serde_json::to_value(&cfg)?, None);
                for strategy in Strategy::ALL {
                    let mut child = self.new_record(&req.session_id, JobKind::Train, Value::Null, Some(strategy));
                    let mut child_cfg = cfg.child(strategy);
                    child_cfg.output_dir = Some(self.output_dir(&child.job_id));
                    child.config = serde_json::to_value(&child_cfg)?;
                    child.parent_id = Some(parent.job_id.clone());
                    parent.child_ids.push(child.job_id.clone());
                    records.push(child);
                }
                parent.transition(JobState::Running, Utc::now())?;
                records.insert(0, parent);
            }
        }

        let mut procs = lock(&self.procs);
        for rec in &records {
            if rec.kind != JobKind::Compare {
                let dir = self.job_dir(&rec.job_id);
                fs::create_dir_all(&dir).map_err(|e| OrchestratorError::io(&dir, e))?;
                let path = dir.join("config.json");
                fs::write(&path, serde_json::to_vec_pretty(&rec.config)?).map_err(|e| OrchestratorError::io(&path, e))?;
            }
            self.docs.put(JOBS, &rec.job_id, rec)?;
        }
        self.launch_queued(&mut procs)?;
        drop(procs);
        self.get_job(&records[0].job_id)
    }

    /// Start queued jobs in submission order while slots are free.
    fn launch_queued(&self, procs: &mut HashMap<String, Child>) -> Result<()> {
        let queued: Vec<JobRecord> =
            self.list_jobs(None)?.into_iter().filter(|j| j.state == JobState::Queued).collect();
        for mut job in queued {
            if procs.len() >= self.cfg.max_concurrent.max(1) {
                break;
            }
            let mode = if job.kind == JobKind::Tune { "tune" } else { "train" };
            let log = self.log_path(&job.job_id);
            let spawned = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&log)
                .and_then(|out| {
                    let err = out.try_clone()?;
                    self.cfg
                        .worker
                        .command(mode, &self.job_dir(&job.job_id).join("config.json"))
                        .stdin(Stdio::null())
                        .stdout(out)
                        .stderr(err)
                        .spawn()
                });
            job.transition(JobState::Running, Utc::now())?;
            match spawned {
                Ok(child) => {
                    procs.insert(job.job_id.clone(), child);
                }
                Err(e) => {
                    job.transition(JobState::Failed, Utc::now())?;
                    job.error = Some(format!("could not start trainer: {e}"));
                }
            }
            self.docs.put(JOBS, &job.job_id, &job)?;
        }
        Ok(())
    }

    /// Read the job's log from its cursor to EOF and apply every complete
    /// line. Returns the number of metric events added or changed.
    fn ingest(&self, job: &mut JobRecord) -> Result<usize> {
        let path = self.log_path(&job.job_id);
        let mut cursor = self.cursor(&job.job_id)?;
        let mut file = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(OrchestratorError::io(&path, e)),
        };
        let len = file.metadata().map_err(|e| OrchestratorError::io(&path, e))?.len();
        if len < cursor.byte_offset {
            let warning = format!("log shrank to {len} bytes below cursor {}", cursor.byte_offset);
            if !job.warnings.contains(&warning) {
                job.warnings.push(warning);
            }
            return Ok(0);
        }
        let mut chunk = Vec::new();
        file.seek(SeekFrom::Start(cursor.byte_offset))
            .and_then(|_| file.take(len - cursor.byte_offset).read_to_end(&mut chunk))
            .map_err(|e| OrchestratorError::io(&path, e))?;
        let parsed = parse_log_chunk(&chunk, cursor.byte_offset);

        let mut metrics: Vec<MetricEvent> = self.docs.get(METRICS, &job.job_id)?.unwrap_or_default();
        let mut changed = 0;
        for event in parsed.events {
            match event {
                TrainerEvent::Epoch(payload) => {
                    let ev = MetricEvent { job_id: job.job_id.clone(), epoch: payload.epoch, split: payload.split, payload };
                    changed += usize::from(upsert_metric(&mut metrics, ev));
                }
                TrainerEvent::Final(report) if job.state == JobState::Running => {
                    job.report = Some(report);
                    job.transition(JobState::Completed, Utc::now())?;
                }
                TrainerEvent::Status { state: RunState::Completed, .. } if job.state == JobState::Running => {
                    job.transition(JobState::Completed, Utc::now())?;
                }
                TrainerEvent::Status { state: RunState::Failed, message } if job.state == JobState::Running => {
                    job.error = Some(message);
                    job.transition(JobState::Failed, Utc::now())?;
                }
                _ => {}
            }
        }
        job.warnings.extend(parsed.warnings);
        // Metrics before cursor: a crash in between replays lines, and
        // replays are idempotent.
        if changed > 0 {
            self.docs.put(METRICS, &job.job_id, &metrics)?;
        }
        cursor.byte_offset += parsed.consumed as u64;
        cursor.partial_line = parsed.partial;
        self.docs.put(CURSORS, &job.job_id, &cursor)?;
        Ok(changed)
    }

    /// One poll cycle over every active job. Cycles never overlap.
    pub fn poll_logs(&self) -> Result<usize> {
        let _cycle = lock(&self.poll);
        let mut procs = lock(&self.procs);
        let mut total = 0;
        for mut job in self.list_jobs(None)? {
            if job.state != JobState::Running || job.kind == JobKind::Compare {
                continue;
            }
            let before = job.clone();
            let exit = match procs.get_mut(&job.job_id) {
                Some(child) => child.try_wait().map_err(|e| OrchestratorError::io(self.log_path(&job.job_id), e))?,
                None => None,
            };
            match self.ingest(&mut job) {
                Ok(n) => total += n,
                Err(e) => {
                    tracing::warn!(job = %job.job_id, "poll cycle: {e}");
                    continue;
                }
            }
            if let Some(status) = exit {
                procs.remove(&job.job_id);
                if job.state == JobState::Running {
                    job.error = Some(format!("trainer exited ({status}) without a final report"));
                    job.transition(JobState::Failed, Utc::now())?;
                }
            }
            if job.kind == JobKind::Tune && job.state == JobState::Completed && before.state != JobState::Completed {
                if let Err(e) = self.record_tune_outcome(&job) {
                    job.warnings.push(format!("tuning outcome not recorded: {e}"));
                }
            }
            if job != before {
                self.docs.put(JOBS, &job.job_id, &job)?;
            }
        }
        self.settle_compare_jobs()?;
        self.launch_queued(&mut procs)?;
        Ok(total)
    }

    /// A compare job ends when all of its children have: completed if any
    /// child completed, failed otherwise.
    fn settle_compare_jobs(&self) -> Result<()> {
        let jobs = self.list_jobs(None)?;
        let by_id: HashMap<&str, &JobRecord> = jobs.iter().map(|j| (j.job_id.as_str(), j)).collect();
        for parent in jobs.iter().filter(|j| j.kind == JobKind::Compare && j.state == JobState::Running) {
            let children: Vec<&JobRecord> = parent.child_ids.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect();
            if children.len() == parent.child_ids.len() && children.iter().all(|c| c.state.is_terminal()) {
                let mut parent = parent.clone();
                let ok = children.iter().any(|c| c.state == JobState::Completed);
                if !ok {
                    parent.error = Some("every strategy failed".into());
                }
                parent.transition(if ok { JobState::Completed } else { JobState::Failed }, Utc::now())?;
                self.docs.put(JOBS, &parent.job_id, &parent)?;
            }
        }
        Ok(())
    }

    fn record_tune_outcome(&self, job: &JobRecord) -> Result<()> {
        let hash = job_hash(&job.job_id);
        if self.docs.get::<TuneOutcome>(OUTCOMES, &hash)?.is_some() {
            return Ok(());
        }
        let path = self.output_dir(&job.job_id).join(TUNE_RESULT_FILE);
        let bytes = fs::read(&path).map_err(|e| OrchestratorError::io(&path, e))?;
        let report: TuneReport = serde_json::from_slice(&bytes)?;
        let cfg: TuneJobConfig = serde_json::from_value(job.config.clone())?;
        let outcome = anonymize_outcome(
            &job.job_id,
            report.base_model.strategy,
            cfg.tune.method,
            &config_values(&report.result.best_train, &report.result.best_model),
            &config_values(&report.base_train, &report.base_model),
            report.result.winning_metric,
        );
        self.docs.put(OUTCOMES, &hash, &outcome)
    }

    pub fn tuning_outcomes(&self) -> Result<Vec<TuneOutcome>> {
        self.docs.list(OUTCOMES)
    }

    /// Terminate a running job. Checkpoints are only ever replaced by atomic
    /// rename, so the best one written so far survives the kill.
    pub fn stop_job(&self, job_id: &str) -> Result<JobRecord> {
        let mut procs = lock(&self.procs);
        let job = self.get_job(job_id)?;
        if job.state != JobState::Running {
            return Err(OrchestratorError::Conflict(format!("job {job_id} is {:?}, not running", job.state)));
        }
        let targets = if job.kind == JobKind::Compare { job.child_ids.clone() } else { vec![job.job_id.clone()] };
        for id in &targets {
            let mut target = self.get_job(id)?;
            if target.state.is_terminal() {
                continue;
            }
            if let Some(mut child) = procs.remove(id) {
                // Already exited is fine; the state check below decides.
                let _ = child.kill();
                let _ = child.wait();
            }
            if target.state == JobState::Running {
                self.ingest(&mut target)?;
            }
            if target.state == JobState::Queued {
                target.transition(JobState::Running, Utc::now())?;
            }
            if target.state == JobState::Running {
                target.transition(JobState::Stopped, Utc::now())?;
            }
            self.docs.put(JOBS, id, &target)?;
        }
        if job.kind == JobKind::Compare {
            let mut parent = self.get_job(job_id)?;
            parent.transition(JobState::Stopped, Utc::now())?;
            self.docs.put(JOBS, job_id, &parent)?;
        }
        self.launch_queued(&mut procs)?;
        self.get_job(job_id)
    }

    /// Approval-gated packaging. Returns nothing and writes nothing unless
    /// `approved` is exactly true.
    pub fn deploy(&self, req: DeployRequest) -> Result<DeploymentRecord> {
        if req.approved != Some(true) {
            return Err(OrchestratorError::ApprovalRequired);
        }
        let texts = [&req.title, &req.description, &req.organ].into_iter().chain(&req.tags);
        if let Some(bad) = texts.into_iter().find(|t| !architecture_free(t)) {
            return Err(OrchestratorError::BadRequest(format!(
                "deployment metadata must use clinical terms only, not model internals: {bad:?}"
            )));
        }
        if req.title.trim().is_empty() || req.organ.trim().is_empty() {
            return Err(OrchestratorError::BadRequest("title and organ are required".into()));
        }
        let _guard = lock(&self.procs);
        let job = self.get_job(&req.job_id)?;
        if job.kind != JobKind::Train || job.state != JobState::Completed {
            return Err(OrchestratorError::Conflict(format!(
                "job {} is a {:?} job in state {:?}; only completed train jobs deploy",
                job.job_id, job.kind, job.state
            )));
        }
        let existing: Vec<DeploymentRecord> = self.docs.list(DEPLOYMENTS)?;
        if let Some(d) = existing.iter().find(|d| d.job_id == job.job_id) {
            return Err(OrchestratorError::Conflict(format!(
                "job {} is already deployed as widget {} at {}",
                job.job_id, d.widget_id, d.artifact_path
            )));
        }
        let path = package_artifacts(&self.output_dir(&job.job_id), &job.job_id, &self.cfg.artifact_dir)?;
        let mut performance_summary = BTreeMap::new();
        if let Some(report) = &job.report {
            summary("val", &report.val, &mut performance_summary);
            if let Some(test) = &report.test {
                summary("test", test, &mut performance_summary);
            }
        }
        let rec = DeploymentRecord {
            widget_id: Uuid::new_v4().to_string(),
            job_id: job.job_id.clone(),
            title: req.title,
            description: req.description,
            organ: req.organ,
            tags: req.tags,
            performance_summary,
            artifact_path: path.to_string_lossy().into_owned(),
        };
        if has_architecture_keys(&serde_json::to_value(&rec)?) {
            return Err(OrchestratorError::BadRequest("deployment record would expose model internals".into()));
        }
        self.docs.put(DEPLOYMENTS, &rec.widget_id, &rec)?;
        Ok(rec)
    }

    pub fn get_deployment(&self, widget_id: &str) -> Result<DeploymentRecord> {
        self.docs
            .get(DEPLOYMENTS, widget_id)?
            .ok_or_else(|| OrchestratorError::NotFound(format!("deployment {widget_id}")))
    }

    pub fn comparison(&self, job_id: &str) -> Result<ComparisonTable> {
        let job = self.get_job(job_id)?;
        if job.kind != JobKind::Compare {
            return Err(OrchestratorError::BadRequest(format!("job {job_id} is not a compare job")));
        }
        let mut rows = Vec::new();
        for id in &job.child_ids {
            let child = self.get_job(id)?;
            rows.push(ComparisonRow {
                strategy: child.strategy.unwrap_or(Strategy::Pooling),
                job_id: child.job_id.clone(),
                state: child.state,
                best_epoch: child.report.as_ref().map(|r| r.best_epoch),
                val: child.report.as_ref().map(|r| r.val),
                test: child.report.as_ref().and_then(|r| r.test),
                error: child.error.clone(),
            });
        }
        let complete = rows.iter().all(|r| r.state.is_terminal());
        Ok(ComparisonTable { job_id: job.job_id, state: job.state, complete, rows })
    }

    /// Kill every live trainer; used on shutdown.
    pub fn shutdown(&self) {
        for (_, mut child) in lock(&self.procs).drain() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
