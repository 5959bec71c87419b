//! The trainer process. The service launches it as
//! `<program> <args..> train|tune <config.json>`; it reports progress only
//! through `[trainer]` lines on stdout.

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use slidemil::job::{load_data, resolve_model, run_train_job, TrainJobConfig};
use slidemil::train::{RunState, TrainerEvent};
use slidemil::tuner::{run_tuning, TrialResult, TrialRunner, TrialSpec};

use crate::types::{TuneJobConfig, TuneReport};

pub const TUNE_RESULT_FILE: &str = "tune_result.json";

/// How to start a worker process: a program plus leading arguments, before
/// the mode and config path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerCommand {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<OsString>,
}

impl WorkerCommand {
    pub fn command(&self, mode: &str, config: &Path) -> Command {
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args).arg(mode).arg(config);
        cmd
    }
}

fn emit(event: &TrainerEvent) {
    let mut out = std::io::stdout().lock();
    // A closed stdout leaves nobody to report to.
    let _ = writeln!(out, "{}", event.to_line());
    let _ = out.flush();
}

fn status(state: RunState, message: impl Into<String>) -> TrainerEvent {
    TrainerEvent::Status { state, message: message.into() }
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let bytes = fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("invalid config {}: {e}", path.display()))
}

/// Run one worker invocation and return the process exit code. `this`
/// re-invokes the same worker, which tune mode uses to isolate trials.
pub fn run_worker(this: &WorkerCommand, args: &[String]) -> i32 {
    let result = match args {
        [mode, config] if mode == "train" => train(Path::new(config)),
        [mode, config] if mode == "tune" => tune(this, Path::new(config)),
        _ => Err("usage: worker train|tune <config.json>".to_owned()),
    };
    match result {
        Ok(()) => 0,
        Err(message) => {
            emit(&status(RunState::Failed, message));
            1
        }
    }
}

fn train(config: &Path) -> Result<(), String> {
    let cfg: TrainJobConfig = read_config(config)?;
    run_train_job(&cfg, &mut |e| emit(e)).map(|_| ()).map_err(|e| e.to_string())
}

fn tune(this: &WorkerCommand, config: &Path) -> Result<(), String> {
    let cfg: TuneJobConfig = read_config(config)?;
    let out_dir = cfg.job.output_dir.clone().ok_or("tune job needs an output_dir")?;
    let trial_dir = out_dir.join("trials");
    fs::create_dir_all(&trial_dir).map_err(|e| format!("cannot create {}: {e}", trial_dir.display()))?;

    let data = load_data(&cfg.job.data).map_err(|e| e.to_string())?;
    let base_model = resolve_model(&cfg.job, &data).map_err(|e| e.to_string())?;
    drop(data);
    let counts = cfg.tune.trial_counts(cfg.job.strategy);
    emit(&status(RunState::Running, format!("tuning {} with {:?} trials per stage", cfg.job.strategy, counts)));

    let mut runner = ProcessTrialRunner { worker: this.clone(), base: cfg.job.clone(), dir: trial_dir };
    let result = run_tuning(&cfg.tune, &cfg.job.train, &base_model, &mut runner).map_err(|e| e.to_string())?;
    let report = TuneReport { base_train: cfg.job.train.clone(), base_model, result };
    let path = out_dir.join(TUNE_RESULT_FILE);
    let tmp = out_dir.join(format!("{TUNE_RESULT_FILE}.tmp"));
    let bytes = serde_json::to_vec_pretty(&report).map_err(|e| e.to_string())?;
    fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, &path)).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    emit(&status(
        RunState::Completed,
        format!("tuning finished, winning val_auroc {:.4}", report.result.winning_metric),
    ));
    Ok(())
}

/// Runs every trial as a separate `train` worker so trials share no state.
pub struct ProcessTrialRunner {
    pub worker: WorkerCommand,
    pub base: TrainJobConfig,
    pub dir: PathBuf,
}

impl TrialRunner for ProcessTrialRunner {
    fn run_trial(&mut self, trial: &TrialSpec) -> slidemil::Result<TrialResult> {
        use slidemil::Error;
        let cfg = TrainJobConfig {
            model: Some(trial.model.clone()),
            train: trial.train.clone(),
            output_dir: None,
            skip_test: true,
            ..self.base.clone()
        };
        let path = self.dir.join(format!("trial_{}_{}.json", trial.stage_index, trial.trial_index));
        fs::write(&path, serde_json::to_vec_pretty(&cfg)?).map_err(|e| Error::Trial(format!("{}: {e}", path.display())))?;

        let mut child = self
            .worker
            .command("train", &path)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::Trial(format!("cannot start trial: {e}")))?;
        let stdout = child.stdout.take().ok_or_else(|| Error::Trial("trial stdout unavailable".into()))?;
        let mut outcome = Err(Error::Trial("trial ended without a final report".into()));
        for line in BufReader::new(stdout).lines() {
            let line = line.map_err(|e| Error::Trial(e.to_string()))?;
            match slidemil::train::parse_trainer_line(&line) {
                Some(Ok(TrainerEvent::Final(report))) => {
                    outcome = Ok(TrialResult { val_auroc: report.val.auroc, epochs_run: report.epochs_run })
                }
                Some(Ok(TrainerEvent::Status { state: RunState::Failed, message })) => {
                    outcome = Err(Error::Trial(message))
                }
                _ => {}
            }
        }
        let exit = child.wait().map_err(|e| Error::Trial(e.to_string()))?;
        if outcome.is_ok() && !exit.success() {
            return Err(Error::Trial(format!("trial process exited with {exit}")));
        }
        let tag = match &outcome {
            Ok(r) => format!("val_auroc {:.4}", r.val_auroc),
            Err(e) => format!("failed: {e}"),
        };
        emit(&status(RunState::Running, format!("stage {} trial {}: {tag}", trial.stage_index, trial.trial_index)));
        outcome
    }
}
