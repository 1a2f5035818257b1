//! `cfpeaks` command-line runner.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use cfpeaks_cli::{run, write_verdict, CliError, RunConfig, RunContext, EXIT_CHECK_FAILED, EXIT_INTERNAL, EXIT_PASS};
use clap::{Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "cfpeaks", version, about = "Stationary Dirac-peak solutions of coagulation-fragmentation kinetics and their stability")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file (flat object; unknown keys are errors).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: cfpeaks-out/<subcommand>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parameter sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Stationary profiles, mass inversion, tail asymptotics, weak-form stationarity.
    Stationary,
    /// Linearized evolution: conservation, Lyapunov decay, decay rate, smoothing.
    LinearDecay,
    /// Fundamental solutions against direct integration.
    FundsolCheck,
    /// Nonlinear peak dynamics near a stationary profile.
    EvolvePeaks,
    /// Fixed-point construction of the perturbation and tail parameter.
    FixedPoint,
    /// Mild solutions of the truncated measure equation.
    MeasureEvolve,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Stationary => "stationary",
            Command::LinearDecay => "linear-decay",
            Command::FundsolCheck => "fundsol-check",
            Command::EvolvePeaks => "evolve-peaks",
            Command::FixedPoint => "fixed-point",
            Command::MeasureEvolve => "measure-evolve",
        }
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    jobs: usize,
    started_unix_seconds: u64,
    elapsed_seconds: f64,
    config: &'a RunConfig,
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let name = cli.command.name();
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("cfpeaks-out").join(name));
    std::fs::create_dir_all(&out)?;
    let ctx = RunContext { out: Some(out.clone()), seed, jobs: cli.jobs };
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let verdict = run(name, &cfg, &ctx)?;
    write_verdict(&out, &verdict)?;
    let sidecar = Sidecar {
        command: name,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        jobs: cli.jobs,
        started_unix_seconds: started,
        elapsed_seconds: clock.elapsed().as_secs_f64(),
        config: &cfg,
    };
    cfpeaks::io::write_json(&out.join("diagnostics.json"), &sidecar).map_err(|e| CliError::Internal(e.to_string()))?;
    for c in &verdict.checks {
        println!("{} {} measured={:e} tolerance={:e}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.measured, c.tolerance);
    }
    Ok(if verdict.passed { EXIT_PASS } else { EXIT_CHECK_FAILED })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("cfpeaks: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code.clamp(0, EXIT_INTERNAL) as u8)
}
