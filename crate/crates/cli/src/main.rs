//! `motifcut` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 input or I/O error,
//! 4 numerical failure (or a failed `verify` check).

mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use thiserror::Error;

use motifcut::eval::EvalError;
use motifcut::generate::GenerateError;
use motifcut::io::IoError;
use motifcut::mechanism::MechanismError;
use motifcut::report::ReportError;

use crate::config::{Cli, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{failed} verification check(s) failed")]
    VerifyFailed { failed: usize },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Numerical(_) | CliError::VerifyFailed { .. } => 4,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<GenerateError> for CliError {
    fn from(e: GenerateError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<MechanismError> for CliError {
    fn from(e: MechanismError) -> Self {
        match e {
            MechanismError::Dp(_) => CliError::Config(e.to_string()),
            MechanismError::Graph(_) | MechanismError::InvalidInput(_) | MechanismError::ReplayMismatch(_) => {
                CliError::Input(e.to_string())
            }
            MechanismError::Sdp(_) | MechanismError::Solver { .. } | MechanismError::InfeasibleCaps { .. } => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Graph(_) => CliError::Input(e.to_string()),
            EvalError::Sdp(_) => CliError::Numerical(e.to_string()),
            EvalError::ExhaustiveBudget { .. } | EvalError::SampleBudget { .. } | EvalError::InvalidInput(_) => {
                CliError::Config(e.to_string())
            }
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("MOTIFCUT_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| CliError::Config(format!("MOTIFCUT_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size worker pool: {e}")))
}

fn load_config(cli: Cli) -> Result<(RunConfig, bool), CliError> {
    let config = match (cli.config, cli.command) {
        (Some(_), Some(_)) => return Err(CliError::Config("--config cannot be combined with a subcommand".into())),
        (Some(path), None) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        (None, Some(command)) => command.into_config()?,
        (None, None) => return Err(CliError::Config("a subcommand or --config is required".into())),
    };
    config.validate()?;
    Ok((config, cli.print_config))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| load_config(cli)).and_then(|(config, print_only)| {
        if print_only {
            println!("{}", serde_json::to_string_pretty(&config).expect("configuration serializes"));
            Ok(())
        } else {
            commands::execute(&config)
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("motifcut: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
