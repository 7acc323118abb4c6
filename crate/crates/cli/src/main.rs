//! `superdrift` command-line driver.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 solver
//! failure (or suspected blow-up with `--fail-on-blowup`), 3 violated checks.

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Exit status of a subcommand that ran to completion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    SolverFailure,
    ChecksFailed,
}

impl Verdict {
    fn code(self) -> u8 {
        match self {
            Verdict::Ok => 0,
            Verdict::SolverFailure => 2,
            Verdict::ChecksFailed => 3,
        }
    }
}

/// Solver errors map to 2, everything else to 1.
fn error_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<superdrift::Error>() {
        Some(superdrift::Error::LinearSolve { .. } | superdrift::Error::BlowUp { .. }) => 2,
        _ => 1,
    }
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("SUPERDRIFT_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| anyhow::anyhow!("SUPERDRIFT_THREADS must be a positive integer, got {value:?}"))?;
    anyhow::ensure!(n > 0, "SUPERDRIFT_THREADS must be a positive integer, got 0");
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = init_threads().and_then(|()| match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Regime(a) => commands::regime(a),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::ContractionTest(a) => commands::contraction_test(a),
        Command::Fixedpoint(a) => commands::fixedpoint(a),
        Command::Constants(a) => commands::constants(a),
    });
    match result {
        Ok(v) => ExitCode::from(v.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error_code(&e))
        }
    }
}
