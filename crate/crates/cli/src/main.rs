#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dvpdsim_core::engine::EngineError;
use dvpdsim_core::plane::PlaneError;
use dvpdsim_core::policy::PolicyKind;

mod commands;
mod config;
mod svg;

#[derive(Debug, Parser)]
#[command(
    name = "dvpdsim",
    version,
    about = "Quasi-static simulator for distributed voltage regulators on a shared power plane"
)]
struct Cli {
    /// TOML run manifest.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Generator seed; overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Also write SVG charts.
    #[arg(long, global = true)]
    svg: bool,
    /// Policy to run; overrides `policy.kind` and, for sweeps, `sweep.policies`.
    #[arg(long, global = true)]
    policy: Option<PolicyKind>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the configured trace under one policy.
    Run,
    /// Steady-state efficiency and losses against load fraction.
    Sweep,
    /// Difference two summary.csv files.
    Compare {
        baseline: PathBuf,
        candidate: PathBuf,
    },
    /// Run the built-in acceptance suite.
    Selftest,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("selftest failed: {0} criterion(s) did not pass")]
    Selftest(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Selftest(_) => 1,
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match &e {
            EngineError::Solver { .. }
            | EngineError::Plane(PlaneError::Singular(_) | PlaneError::NotConverged { .. }) => {
                CliError::Solver(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

/// Command-line values that override the manifest.
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub svg: bool,
    pub policy: Option<PolicyKind>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ov = Overrides {
        out: cli.out,
        seed: cli.seed,
        svg: cli.svg,
        policy: cli.policy,
    };
    let res = match cli.command {
        Command::Run => commands::run(cli.config.as_deref(), &ov),
        Command::Sweep => commands::sweep(cli.config.as_deref(), &ov),
        Command::Compare {
            baseline,
            candidate,
        } => commands::compare(&baseline, &candidate, &ov),
        Command::Selftest => commands::selftest(cli.config.as_deref()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dvpdsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
