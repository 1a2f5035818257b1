//! Experiment runner for the `cfpeaks` library.
//!
//! Each subcommand reads a flat JSON [`RunConfig`], performs one family of
//! computations, writes CSV data files (full precision, no timestamps) and
//! returns a [`Verdict`] listing every assertion with its tolerance and
//! measured value. The binary adds the JSON verdict and a diagnostics
//! sidecar (the only file carrying wall-clock information).

pub mod commands;
pub mod config;
pub mod verdict;

use std::path::{Path, PathBuf};

pub use config::{MeasureMode, RunConfig};
pub use verdict::{Check, Relation, Verdict};

/// Exit code of a run whose checks all passed.
pub const EXIT_PASS: i32 = 0;
/// Exit code of a run with at least one failed check.
pub const EXIT_CHECK_FAILED: i32 = 1;
/// Exit code of a configuration or parameter error.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code of any other failure.
pub const EXIT_INTERNAL: i32 = 3;

/// Failure of a run before a verdict could be formed.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<cfpeaks::Error> for CliError {
    fn from(e: cfpeaks::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

/// Where and how a run writes its results.
#[derive(Debug, Clone)]
pub struct RunContext {
    /// Output directory; `None` computes without writing files.
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// Worker threads for parameter sweeps.
    pub jobs: usize,
}

impl RunContext {
    /// A context that writes nothing.
    pub fn in_memory(seed: u64) -> Self {
        Self { out: None, seed, jobs: 1 }
    }

    fn comments(&self, command: &str) -> Vec<String> {
        vec![format!("cfpeaks {command}"), format!("seed = {}", self.seed)]
    }

    fn csv(&self, command: &str, name: &str, columns: &[&str], rows: &[Vec<cfpeaks::io::Cell>]) -> Result<(), CliError> {
        if let Some(dir) = &self.out {
            cfpeaks::io::write_csv(&dir.join(name), &self.comments(command), columns, rows)?;
        }
        Ok(())
    }

    fn json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        if let Some(dir) = &self.out {
            cfpeaks::io::write_json(&dir.join(name), value)?;
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .map_err(|e| CliError::Internal(e.to_string()))
    }
}

/// Subcommand names accepted by [`run`].
pub const COMMANDS: [&str; 6] = ["stationary", "linear-decay", "fundsol-check", "evolve-peaks", "fixed-point", "measure-evolve"];

/// Dispatches a subcommand by name.
pub fn run(command: &str, cfg: &RunConfig, ctx: &RunContext) -> Result<Verdict, CliError> {
    match command {
        "stationary" => commands::stationary(cfg, ctx),
        "linear-decay" => commands::linear_decay(cfg, ctx),
        "fundsol-check" => commands::fundsol_check(cfg, ctx),
        "evolve-peaks" => commands::evolve_peaks(cfg, ctx),
        "fixed-point" => commands::fixed_point(cfg, ctx),
        "measure-evolve" => commands::measure_evolve(cfg, ctx),
        other => Err(CliError::Validation(format!("unknown subcommand '{other}'"))),
    }
}

/// Writes the verdict next to the data files.
pub fn write_verdict(out: &Path, verdict: &Verdict) -> Result<(), CliError> {
    cfpeaks::io::write_json(&out.join("verdict.json"), verdict)?;
    Ok(())
}
