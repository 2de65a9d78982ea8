//! Experiment runner for the mtesim model.
//!
//! Exit codes: 0 on success, 2 for configuration/usage errors (clap uses
//! the same code for flag errors), 3 for simulation or output failures.

mod opts;
mod run;

use clap::Parser;
use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = opts::Cli::parse();
    match run::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
