//! Command-line front end for the aberrant-outcome sensitivity library:
//! CSV ingestion, worst-case tests with sensitivity values, design
//! sensitivities, and power/size simulations, each emitting one
//! machine-readable run record.
//!
//! Process contract: exit code 0 means the run completed, 2 means the
//! inputs failed validation, and 3 means the run completed but some verdict
//! came from a solver fallback rather than a clean solve.

pub mod args;
pub mod commands;
pub mod csvio;
pub mod plot;
pub mod records;

use std::path::Path;

pub use args::Cli;
pub use commands::CommandOutput;
pub use records::RunRecord;

/// Default RNG seed for randomized commands. A fixed constant, never the
/// wall clock, so unseeded runs are still reproducible.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed CSV input, tagged with its 1-based line number.
    #[error("{path}:{line}: {message}")]
    Csv {
        path: String,
        line: u64,
        message: String,
    },
    /// A flag combination or value the command cannot act on.
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Analysis(#[from] aberrank::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Runs one parsed command and writes its outputs. The returned record is
/// what was serialized; the caller turns `solver_fallback` into exit code 3.
pub fn run(cli: Cli) -> Result<RunRecord, CliError> {
    let (out, output) = match cli.command {
        args::Command::Test(a) => (a.out.clone(), commands::cmd_test(&a)?),
        args::Command::DesignSensitivity(a) => {
            (a.out.clone(), commands::cmd_design_sensitivity(&a)?)
        }
        args::Command::Power(a) => (a.out.clone(), commands::cmd_power(&a)?),
        args::Command::Size(a) => (a.out.clone(), commands::cmd_size(&a)?),
    };
    emit(&output, &out)?;
    Ok(output.record)
}

fn emit(output: &CommandOutput, out: &args::OutputArgs) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(&output.record)?;
    match &out.output {
        Some(path) => std::fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    if let Some(path) = &out.table {
        write_table(path, &output.table)?;
    }
    if let Some(path) = &out.plot {
        let series = output.plot.as_ref().ok_or_else(|| {
            CliError::Invalid("this command has no gamma-indexed series to plot".into())
        })?;
        plot::write_svg(path, series)?;
    }
    Ok(())
}

fn write_table(path: &Path, rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::Csv {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    for row in rows {
        writer.write_record(row).map_err(|e| CliError::Csv {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
    }
    writer.flush()?;
    Ok(())
}
