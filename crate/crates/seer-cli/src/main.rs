//! `seer` — command-line front end for the cluster simulator.
//!
//! Exit codes: 0 on success, 2 on a configuration error, 3 when a safety
//! invariant is violated during a run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use seer_core::harness::{run_matrix, run_pair, Grid};
use seer_core::scenario::{Mode, ScenarioConfig};
use seer_core::sim::{run_scenario, RunError};

#[derive(Parser)]
#[command(
    name = "seer",
    version,
    about = "Deterministic consensus-cluster simulator with prediction-driven leader election"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its summary.
    Run {
        /// Scenario file, flat `key = value` lines.
        #[arg(long)]
        config: PathBuf,
        /// Override the scenario's seed.
        #[arg(long, value_name = "N")]
        seed: Option<u64>,
        /// Override the election mode.
        #[arg(long, value_parser = parse_mode, value_name = "seer|nat")]
        mode: Option<Mode>,
        /// Write the full artifact set (CSVs, event log) into this directory.
        #[arg(long, value_name = "dir")]
        out: Option<PathBuf>,
    },
    /// Run the scenario under both election modes on shared workload traces.
    Pair {
        /// Scenario file, flat `key = value` lines; `mode` is ignored.
        #[arg(long)]
        config: PathBuf,
        /// Write both runs' artifacts plus the comparison into this directory.
        #[arg(long, value_name = "dir")]
        out: Option<PathBuf>,
    },
    /// Run every cell of a sweep grid and print the aggregate CSV.
    Matrix {
        /// Grid file: scenario syntax, with `|` between per-key alternatives.
        #[arg(long)]
        grid: PathBuf,
        /// Also write the aggregate table to `<dir>/matrix.csv`.
        #[arg(long, value_name = "dir")]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| format!("expected `seer` or `nat`, got {s:?}"))
}

fn write_error(e: std::io::Error) -> RunError {
    RunError::Config(format!("cannot write outputs: {e}"))
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run { config, seed, mode, out } => {
            let mut cfg = ScenarioConfig::parse_file(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(mode) = mode {
                cfg.mode = mode;
            }
            let report = run_scenario(&cfg)?;
            if let Some(dir) = out {
                report.write_outputs(&dir).map_err(write_error)?;
            }
            print!("{}", report.summary_text());
            Ok(())
        }
        Command::Pair { config, out } => {
            let cfg = ScenarioConfig::parse_file(&config)?;
            let pair = run_pair(&cfg)?;
            if let Some(dir) = out {
                pair.write_outputs(&dir).map_err(write_error)?;
            }
            print!("{}", pair.summary_text());
            Ok(())
        }
        Command::Matrix { grid, out } => {
            let grid = Grid::parse_file(&grid)?;
            let report = run_matrix(&grid);
            let csv = report.csv();
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(write_error)?;
                std::fs::write(dir.join("matrix.csv"), &csv).map_err(write_error)?;
            }
            print!("{csv}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                RunError::Config(_) => ExitCode::from(2),
                RunError::Invariant(_) => ExitCode::from(3),
            }
        }
    }
}
