//! Command definitions and their implementations. Every command produces a
//! JSON value; `main` renders it as text or prints it as-is under `--json`.

use std::ffi::OsString;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use slidemil::deploy::{load_model, predict};
use slidemil::job::{run_train_job, DataSource, TrainJobConfig};
use slidemil::model::Strategy;
use slidemil::store::{generate_synthetic, validate_features, write_store, CohortSpec, FeatureStore, RoutingIndex, SyntheticSpec};
use slidemil::train::TrainConfig;
use slidemil::tuner::{SearchMethod, TuneConfig};
use slidemil_orchestrator::guardrails::check_data;
use slidemil_orchestrator::types::{CompareJobConfig, DeployRequest, JobKind, JobRecord, MetricEvent, TuneJobConfig};
use slidemil_orchestrator::worker::{run_worker, WorkerCommand};
use slidemil_orchestrator::{api, Orchestrator, OrchestratorError, ServiceConfig};

use crate::client::{ApiClient, ClientError};

pub const COHORT_FILE: &str = "cohort.json";

#[derive(Debug, Parser)]
#[command(name = "slidemil", version, about = "Slide-level MIL training, orchestration and inference")]
pub struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Orchestrator base URL.
    #[arg(long, global = true, env = "SLIDEMIL_SERVER", default_value = "http://127.0.0.1:8080")]
    pub server: String,
    /// Bearer token for mutating endpoints.
    #[arg(long, global = true, env = "SLIDEMIL_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-signal synthetic feature store and cohort file.
    SynthGen(SynthGenArgs),
    /// Check that every cohort slide has features and every class enough samples.
    Validate(ValidateArgs),
    /// Run the orchestration service.
    Serve(ServeArgs),
    /// Submit a training job (or run one in-process with --local).
    Train(TrainArgs),
    /// Submit a staged hyperparameter search.
    Tune(TuneArgs),
    /// Submit one training job per strategy and collect a comparison table.
    Compare(CompareArgs),
    /// Follow a job's metrics until it finishes.
    Monitor(MonitorArgs),
    /// Stop a running job.
    Stop(JobRef),
    /// Package a completed job for deployment. Requires --approve.
    Deploy(DeployArgs),
    /// Classify one slide with a deployed model.
    Infer(InferArgs),
    /// List anonymized tuning outcomes.
    Outcomes,
    /// Trainer process entry point used by the service.
    #[command(hide = true)]
    Worker {
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        args: Vec<String>,
    },
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cases per class, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "100,100")]
    pub per_class: Vec<usize>,
    #[arg(long, default_value_t = 1024)]
    pub dim: usize,
    #[arg(long, default_value_t = 64)]
    pub patches_min: usize,
    #[arg(long, default_value_t = 512)]
    pub patches_max: usize,
    #[arg(long, default_value_t = 0.15)]
    pub signal_fraction: f64,
    #[arg(long, default_value_t = 1.5)]
    pub signal_strength: f64,
    #[arg(long, default_value_t = 4)]
    pub shards: usize,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "SLIDEMIL_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Root for documents and job directories.
    #[arg(long, env = "SLIDEMIL_DATA_DIR", default_value = "slidemil-data")]
    pub data_dir: PathBuf,
    #[arg(long, env = "SLIDEMIL_LOG_DIR")]
    pub log_dir: Option<PathBuf>,
    #[arg(long, env = "SLIDEMIL_ARTIFACT_DIR")]
    pub artifact_dir: Option<PathBuf>,
    /// Base directory for relative store paths in job configs.
    #[arg(long, env = "SLIDEMIL_STORE_DIR")]
    pub store_dir: Option<PathBuf>,
    #[arg(long, env = "SLIDEMIL_POLL_INTERVAL_MS", default_value_t = 30_000)]
    pub poll_interval_ms: u64,
    /// Defaults to the number of logical CPUs.
    #[arg(long, env = "SLIDEMIL_MAX_CONCURRENT")]
    pub max_concurrent: Option<usize>,
}

/// Where a job's data comes from and which training knobs to override.
#[derive(Debug, Args)]
pub struct JobArgs {
    /// Full job config file; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, requires = "cohort")]
    pub store: Option<PathBuf>,
    #[arg(long, requires = "store")]
    pub cohort: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Session to file the job under; a new one is created when absent.
    #[arg(long)]
    pub session: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Pooling,
    Abmil,
    Clam,
    Lora,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Pooling => Strategy::Pooling,
            StrategyArg::Abmil => Strategy::Abmil,
            StrategyArg::Clam => Strategy::Clam,
            StrategyArg::Lora => Strategy::Lora,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub job: JobArgs,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Train in this process, bypassing the orchestrator (debugging only).
    #[arg(long)]
    pub local: bool,
    /// Checkpoint directory for --local runs.
    #[arg(long, requires = "local")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Grid,
    Random,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub job: JobArgs,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Trials per stage (random search).
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub tune_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub job: JobArgs,
    /// Wait for all four runs and print the comparison table.
    #[arg(long)]
    pub wait: bool,
    #[arg(long, default_value_t = 2000)]
    pub interval_ms: u64,
}

#[derive(Debug, Args)]
pub struct JobRef {
    #[arg(long)]
    pub job: String,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    #[arg(long)]
    pub job: String,
    #[arg(long, default_value_t = 2000)]
    pub interval_ms: u64,
    /// Print what is there now and exit.
    #[arg(long)]
    pub once: bool,
}

#[derive(Debug, Args)]
pub struct DeployArgs {
    #[arg(long)]
    pub job: String,
    #[arg(long)]
    pub title: String,
    #[arg(long)]
    pub organ: String,
    #[arg(long, default_value = "")]
    pub description: String,
    #[arg(long = "tag")]
    pub tags: Vec<String>,
    /// Explicit human approval. Nothing is deployed without it.
    #[arg(long)]
    pub approve: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Artifact directory produced by a deployment.
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub case: String,
    #[arg(long)]
    pub slide: String,
    /// Include per-patch attention weights.
    #[arg(long)]
    pub attention: bool,
}

/// A failed command: stable code, message and optional details.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CommandError {
    pub code: String,
    pub message: String,
    pub details: Value,
}

impl CommandError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self { code: code.into(), message: message.into(), details: Value::Null }
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({ "error": self.code, "message": self.message });
        if !self.details.is_null() {
            v["details"] = self.details.clone();
        }
        v
    }
}

impl From<ClientError> for CommandError {
    fn from(e: ClientError) -> Self {
        let details = match &e {
            ClientError::Api { body, .. } => body.clone(),
            _ => Value::Null,
        };
        Self { code: e.code().to_owned(), message: e.to_string(), details }
    }
}

impl From<slidemil::Error> for CommandError {
    fn from(e: slidemil::Error) -> Self {
        let code = match e {
            slidemil::Error::Integrity(_) => "integrity",
            slidemil::Error::Config(_) => "bad_request",
            _ => "failed",
        };
        Self::new(code, e.to_string())
    }
}

impl From<OrchestratorError> for CommandError {
    fn from(e: OrchestratorError) -> Self {
        let details = match &e {
            OrchestratorError::Guardrail(r) => serde_json::to_value(r).unwrap_or_default(),
            _ => Value::Null,
        };
        Self { code: e.code().to_owned(), message: e.to_string(), details }
    }
}

pub type CmdResult = Result<Output, CommandError>;

/// Structured result plus its text rendering.
pub struct Output {
    pub value: Value,
    pub text: String,
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CommandError {
    CommandError::new("io", format!("{}: {e}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CommandError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CommandError::new("bad_request", format!("{}: {e}", path.display())))
}

/// Run a command. `serve` blocks until interrupted; `worker` returns its
/// exit code through the error path only on failure.
pub fn run(cli: Cli) -> CmdResult {
    let client = || ApiClient::new(&cli.server, cli.token.clone());
    match cli.command {
        Command::SynthGen(a) => synth_gen(&a),
        Command::Validate(a) => validate(&a),
        Command::Serve(a) => serve(a, cli.token.clone()),
        Command::Train(a) => train(&client(), a),
        Command::Tune(a) => tune(&client(), a),
        Command::Compare(a) => compare(&client(), a),
        Command::Monitor(a) => monitor(&client(), &a, cli.json),
        Command::Stop(a) => {
            let rec = client().stop(&a.job)?;
            Ok(Output { text: format!("job {} is {:?}", rec.job_id, rec.state), value: to_value(&rec) })
        }
        Command::Deploy(a) => deploy(&client(), a),
        Command::Infer(a) => infer(&a),
        Command::Outcomes => {
            let outcomes = client().tuning_outcomes()?;
            let text = outcomes
                .iter()
                .map(|o| format!("{} {} {} val_auroc={:.4}", &o.job_hash[..12], o.strategy, o.method.as_str(), o.winning_metric))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(Output { value: to_value(&outcomes), text })
        }
        Command::Worker { args } => {
            let program = std::env::current_exe().map_err(|e| CommandError::new("io", e.to_string()))?;
            let this = WorkerCommand { program, args: vec![OsString::from("worker")] };
            std::process::exit(run_worker(&this, &args));
        }
    }
}

pub fn synth_spec(a: &SynthGenArgs) -> SyntheticSpec {
    SyntheticSpec {
        n_cases_per_class: a.per_class.clone(),
        patches_min: a.patches_min,
        patches_max: a.patches_max,
        signal_fraction: a.signal_fraction,
        signal_strength: a.signal_strength,
        feature_dim: a.dim,
        seed: a.seed,
        ..SyntheticSpec::default()
    }
}

fn synth_gen(a: &SynthGenArgs) -> CmdResult {
    let spec = synth_spec(a);
    let bags = generate_synthetic(&spec)?;
    let index = write_store(&bags, a.shards, &a.out)?;
    let cohort = CohortSpec::from_bags(spec.class_names(), &bags);
    let path = a.out.join(COHORT_FILE);
    let mut bytes = serde_json::to_vec_pretty(&cohort).map_err(|e| CommandError::new("failed", e.to_string()))?;
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
    let value = json!({
        "store_dir": a.out,
        "cohort_file": path,
        "slides": index.slide_count(),
        "classes": spec.class_names(),
        "feature_dim": a.dim,
    });
    Ok(Output { text: format!("wrote {} slides to {}; cohort in {}", index.slide_count(), a.out.display(), path.display()), value })
}

fn validate(a: &ValidateArgs) -> CmdResult {
    let cohort: CohortSpec = read_json(&a.cohort)?;
    cohort.validate()?;
    let index = RoutingIndex::load(&a.store)?;
    let report = validate_features(&index, &cohort);
    if report.is_ok() {
        let counts: Vec<String> = report.per_class_counts.iter().map(|(c, n)| format!("{c}={n}")).collect();
        return Ok(Output { text: format!("ok: {}", counts.join(", ")), value: to_value(&report) });
    }
    let mut problems = Vec::new();
    if !report.missing.is_empty() {
        let slides: Vec<String> = report.missing.iter().map(ToString::to_string).collect();
        problems.push(format!("missing features for {}", slides.join(", ")));
    }
    if !report.below_minimum.is_empty() {
        problems.push(format!("too few samples in {}", report.below_minimum.join(", ")));
    }
    Err(CommandError { code: "validation_failed".into(), message: problems.join("; "), details: to_value(&report) })
}

fn serve(a: ServeArgs, token: Option<String>) -> CmdResult {
    let program = std::env::current_exe().map_err(|e| CommandError::new("io", e.to_string()))?;
    let worker = WorkerCommand { program, args: vec![OsString::from("worker")] };
    let mut cfg = ServiceConfig::under(&a.data_dir, worker);
    cfg.log_dir = a.log_dir.unwrap_or(cfg.log_dir);
    cfg.artifact_dir = a.artifact_dir.unwrap_or(cfg.artifact_dir);
    cfg.store_dir = a.store_dir;
    cfg.poll_interval = Duration::from_millis(a.poll_interval_ms.max(100));
    cfg.max_concurrent = a.max_concurrent.unwrap_or(cfg.max_concurrent);
    cfg.auth_token = token;
    let orch = Arc::new(Orchestrator::new(cfg)?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CommandError::new("io", e.to_string()))?;
    runtime
        .block_on(async {
            let listener = api::bind(a.bind).await?;
            eprintln!("listening on {}", listener.local_addr()?);
            api::serve(orch, listener, async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
        })
        .map_err(|e| CommandError::new("io", e.to_string()))?;
    Ok(Output { value: json!({ "stopped": true }), text: "server stopped".into() })
}

fn store_source(j: &JobArgs) -> Result<Option<DataSource>, CommandError> {
    match (&j.store, &j.cohort) {
        (Some(store), Some(cohort)) => {
            Ok(Some(DataSource::Store { store_dir: store.clone(), cohort: read_json(cohort)? }))
        }
        _ => Ok(None),
    }
}

fn apply_overrides(train: &mut TrainConfig, j: &JobArgs) {
    if let Some(e) = j.epochs {
        train.epochs = e;
    }
    if let Some(lr) = j.lr {
        train.learning_rate = lr;
    }
    if let Some(s) = j.seed {
        train.seed = s;
    }
}

fn train_job(j: &JobArgs, strategy: Option<StrategyArg>) -> Result<TrainJobConfig, CommandError> {
    let mut cfg = match (&j.config, store_source(j)?) {
        (Some(path), data) => {
            let mut cfg: TrainJobConfig = read_json(path)?;
            if let Some(d) = data {
                cfg.data = d;
            }
            cfg
        }
        (None, Some(data)) => TrainJobConfig::new(data, Strategy::Abmil),
        (None, None) => return Err(CommandError::new("usage", "give --config or --store with --cohort")),
    };
    if let Some(s) = strategy {
        cfg.strategy = s.into();
    }
    apply_overrides(&mut cfg.train, j);
    if let Some(s) = j.split_seed {
        cfg.split_seed = s;
    }
    Ok(cfg)
}

fn session(client: &ApiClient, j: &JobArgs) -> Result<String, CommandError> {
    match &j.session {
        Some(s) => Ok(s.clone()),
        None => Ok(client.create_session()?),
    }
}

fn submitted(rec: JobRecord) -> CmdResult {
    let mut text = format!("submitted {:?} job {} ({:?})", rec.kind, rec.job_id, rec.state);
    if !rec.child_ids.is_empty() {
        text.push_str(&format!("; children {}", rec.child_ids.join(", ")));
    }
    Ok(Output { value: to_value(&rec), text })
}

fn train(client: &ApiClient, a: TrainArgs) -> CmdResult {
    let mut cfg = train_job(&a.job, a.strategy)?;
    if !a.local {
        let session = session(client, &a.job)?;
        return submitted(client.submit(&session, JobKind::Train, &cfg)?);
    }
    eprintln!("local mode: training in this process, bypassing the orchestrator");
    check_data(&cfg.data)?;
    cfg.output_dir = a.output_dir;
    let outcome = run_train_job(&cfg, &mut |e| eprintln!("{}", e.to_line()))?;
    let r = &outcome.report;
    let text = format!(
        "best epoch {} ({} = {:.4}), {:?} after {} epochs",
        r.best_epoch, r.monitored, r.best_metric_value, r.stop_reason, r.epochs_run
    );
    Ok(Output { value: to_value(r), text })
}

fn tune(client: &ApiClient, a: TuneArgs) -> CmdResult {
    let mut cfg = match &a.job.config {
        Some(path) if store_source(&a.job)?.is_none() => {
            let mut cfg: TuneJobConfig = read_json(path)?;
            apply_overrides(&mut cfg.job.train, &a.job);
            cfg
        }
        _ => TuneJobConfig { job: train_job(&a.job, None)?, tune: TuneConfig::default() },
    };
    if let Some(s) = a.strategy {
        cfg.job.strategy = s.into();
    }
    if let Some(m) = a.method {
        cfg.tune.method = match m {
            MethodArg::Grid => SearchMethod::Grid,
            MethodArg::Random => SearchMethod::Random,
        };
    }
    if a.trials.is_some() {
        cfg.tune.n_trials_per_stage = a.trials;
    }
    if let Some(s) = a.tune_seed {
        cfg.tune.seed = s;
    }
    let session = session(client, &a.job)?;
    submitted(client.submit(&session, JobKind::Tune, &cfg)?)
}

fn compare(client: &ApiClient, a: CompareArgs) -> CmdResult {
    let mut cfg = match (&a.job.config, store_source(&a.job)?) {
        (_, Some(data)) => CompareJobConfig { data, train: TrainConfig::default(), split_seed: 0 },
        (Some(path), None) => read_json(path)?,
        (None, None) => return Err(CommandError::new("usage", "give --config or --store with --cohort")),
    };
    apply_overrides(&mut cfg.train, &a.job);
    if let Some(s) = a.job.split_seed {
        cfg.split_seed = s;
    }
    let session = session(client, &a.job)?;
    let rec = client.submit(&session, JobKind::Compare, &cfg)?;
    if !a.wait {
        return submitted(rec);
    }
    loop {
        let table = client.comparison(&rec.job_id)?;
        if table.complete {
            let mut text = format!("{:<8} {:<10} {:>6} {:>8} {:>8} {:>8}", "strategy", "state", "best", "val_auc", "val_bacc", "test_auc");
            for r in &table.rows {
                let f = |v: Option<f64>| v.map_or("-".to_owned(), |x| format!("{x:.4}"));
                text.push_str(&format!(
                    "\n{:<8} {:<10} {:>6} {:>8} {:>8} {:>8}",
                    r.strategy.as_str(),
                    format!("{:?}", r.state).to_lowercase(),
                    r.best_epoch.map_or("-".to_owned(), |e| e.to_string()),
                    f(r.val.as_ref().map(|m| m.auroc)),
                    f(r.val.as_ref().map(|m| m.balanced_accuracy)),
                    f(r.test.as_ref().map(|m| m.auroc)),
                ));
            }
            return Ok(Output { value: to_value(&table), text });
        }
        std::thread::sleep(Duration::from_millis(a.interval_ms));
    }
}

fn metric_row(e: &MetricEvent) -> String {
    let p = &e.payload;
    format!(
        "{:>5} {:<5} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>10.2e}",
        e.epoch,
        e.split.as_str(),
        p.loss,
        p.auroc,
        p.balanced_accuracy,
        p.macro_f1,
        p.learning_rate
    )
}

fn monitor(client: &ApiClient, a: &MonitorArgs, json_mode: bool) -> CmdResult {
    let mut seen = 0usize;
    if !json_mode {
        println!("{:>5} {:<5} {:>8} {:>8} {:>8} {:>8} {:>10}", "epoch", "split", "loss", "auroc", "bal_acc", "f1", "lr");
    }
    loop {
        let job = client.job(&a.job)?;
        let events = client.metrics(&a.job, None)?;
        if !json_mode {
            for e in events.iter().skip(seen) {
                println!("{}", metric_row(e));
            }
        }
        seen = events.len();
        if job.state.is_terminal() || a.once {
            let mut text = format!("job {} is {:?}", job.job_id, job.state);
            if let Some(err) = &job.error {
                text.push_str(&format!(": {err}"));
            }
            if let Some(r) = &job.report {
                text.push_str(&format!(" (best epoch {}, {} = {:.4})", r.best_epoch, r.monitored, r.best_metric_value));
            }
            return Ok(Output { value: json!({ "job": job, "metrics": events }), text });
        }
        std::thread::sleep(Duration::from_millis(a.interval_ms));
    }
}

fn deploy(client: &ApiClient, a: DeployArgs) -> CmdResult {
    if !a.approve {
        return Err(CommandError::new(
            "approval_required",
            "deployment requires explicit approval: re-run with --approve after reviewing the job's metrics",
        ));
    }
    let req = DeployRequest {
        job_id: a.job,
        approved: Some(true),
        title: a.title,
        description: a.description,
        organ: a.organ,
        tags: a.tags,
    };
    let rec = client.deploy(&req)?;
    Ok(Output { text: format!("deployed widget {} from {}", rec.widget_id, rec.artifact_path), value: to_value(&rec) })
}

fn infer(a: &InferArgs) -> CmdResult {
    let model = load_model(&a.artifact)?;
    let bag = FeatureStore::open(&a.store)?.read_slide(&a.case, &a.slide)?;
    let mut result = predict(&model, &bag)?;
    if !a.attention {
        result.attention = None;
    }
    let probs: Vec<String> = result.probabilities.iter().map(|(c, p)| format!("{c}={p:.4}")).collect();
    Ok(Output { text: format!("{} ({})", result.predicted_label, probs.join(", ")), value: to_value(&result) })
}
