//! Command-line front end for the splitkit experiments.

mod config;
mod output;
mod run;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{parse_args, to_args, Command, Horizon, ModelParams, RunConfig, DEFAULT_FHN, DEFAULT_TOY};
pub use output::{emit_csv, read_trajectory, Cell, Schema};
pub use run::{run, RunOutcome, THREADS_ENV};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Usage(#[from] clap::Error),
    #[error("invalid value for {flag}: {message}")]
    Flag { flag: &'static str, message: String },
    #[error("{command} requires {flag}")]
    Missing { flag: &'static str, command: &'static str },
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("bad input data: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] splitkit::models::ModelError),
    #[error(transparent)]
    Integrator(#[from] splitkit::integrators::IntegratorError),
    #[error(transparent)]
    Analysis(#[from] splitkit::analysis::AnalysisError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(e) if !e.use_stderr() => 0,
            CliError::Usage(_) | CliError::Flag { .. } | CliError::Missing { .. } => 2,
            _ => 1,
        }
    }
}

/// Parses `argv`, runs the command and reports errors on stderr. Returns the
/// process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let result = parse_args(argv).and_then(|config| run(&config));
    match result {
        Ok(outcome) => {
            for path in &outcome.outputs {
                println!("wrote {}", path.display());
            }
            println!("manifest {}", outcome.manifest.display());
            0
        }
        Err(CliError::Usage(e)) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
