use std::process::ExitCode;

use clap::Parser;
use platoon_fd::config::{Cli, PipelineConfig};
use platoon_fd::pipeline::{run, RunStatus};

/// Exit codes: 0 every input processed cleanly, 1 some inputs failed but
/// the rest were written, 2 the command could not run at all.
fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match PipelineConfig::resolve(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command, &cfg) {
        Ok(RunStatus::Clean) => ExitCode::SUCCESS,
        Ok(RunStatus::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
