mod commands;
mod config;
mod error;
mod report;

use std::process::ExitCode;

use clap::Parser;

use config::{Cli, ExperimentConfig, SEED_ENV};
use error::{CliError, CliResult};

fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = ExperimentConfig::resolve(cli, std::env::var(SEED_ENV).ok())?;
    let out = commands::run(cfg)?;
    out.report.emit()?;
    match out.failure {
        Some(why) => Err(CliError::Verification(why)),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("predregret: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
