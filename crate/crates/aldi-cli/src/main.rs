//! `aldi` — label days whose load profile deviates from the building's or
//! site's typical weekday pattern, and evaluate such labelings.
//!
//! Subcommands: `detect` labels meter data, `evaluate` scores a label file
//! against reference labels, `export-filter` emits a keep/drop list for
//! forecast training data, `benchmark` times and scores several methods, and
//! `convert` reshapes wide meter CSVs to the long input format.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for IO errors,
//! 4 for pipeline errors; diagnostics name the failing stage.

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_PIPELINE: u8 = 4;

/// A command failure, classified for the exit code. The message names the
/// stage that failed.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Pipeline(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Pipeline(_) => EXIT_PIPELINE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "aldi",
    version,
    about = "Discord detection for hourly building energy meters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Label anomalous days in an hourly meter CSV
    Detect(commands::DetectArgs),
    /// Score a label CSV against reference labels
    Evaluate(commands::EvaluateArgs),
    /// Emit a keep/drop filter CSV for forecast training data
    ExportFilter(commands::ExportFilterArgs),
    /// Time and score several methods on the same data and truth
    Benchmark(commands::BenchmarkArgs),
    /// Reshape a wide meter CSV (one column per building) to long format
    Convert(commands::ConvertArgs),
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Detect(args) => commands::detect(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::ExportFilter(args) => commands::export_filter(args),
        Command::Benchmark(args) => commands::benchmark(args),
        Command::Convert(args) => commands::convert(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(error.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_are_distinct_and_nonzero() {
        let codes = [
            CliError::Config("x".into()).exit_code(),
            CliError::Io("x".into()).exit_code(),
            CliError::Pipeline("x".into()).exit_code(),
        ];
        assert!(codes.iter().all(|&c| c != 0));
        assert_eq!(codes.len(), {
            let mut unique = codes.to_vec();
            unique.sort_unstable();
            unique.dedup();
            unique.len()
        });
    }
}
