//! Standalone trainer process used by the orchestration service.

use slidemil_orchestrator::worker::{run_worker, WorkerCommand};

fn main() -> anyhow::Result<()> {
    let this = WorkerCommand { program: std::env::current_exe()?, args: Vec::new() };
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(run_worker(&this, &args));
}
