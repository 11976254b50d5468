#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod error;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::CliError;

/// Train, evaluate and compare STL barrier controllers.
#[derive(Debug, Parser)]
#[command(name = "stlcbf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TrainMode {
    Barriernet,
    Fcnet,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a controller and write its checkpoint and learning curve.
    Train {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "barriernet")]
        mode: TrainMode,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Output directory (defaults to the scenario's `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate one controller on fresh initial states.
    Eval {
        config: PathBuf,
        /// Trained checkpoint; without one the fixed-parameter HOCBF is used.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write report, trajectories and a manifest here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare trained controllers with the fixed-parameter HOCBF.
    Compare {
        config: PathBuf,
        #[arg(long)]
        barriernet: Option<PathBuf>,
        #[arg(long)]
        fcnet: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Robustness and verdict of a recorded trajectory.
    Monitor {
        config: PathBuf,
        trajectory: PathBuf,
        /// Formula to check instead of the scenario's own.
        #[arg(long)]
        formula: Option<String>,
    },
    /// Print the synthesized barrier ledger.
    Ledger { config: PathBuf },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            config,
            mode,
            seed,
            iterations,
            batch,
            lr,
            out,
        } => commands::train(&commands::TrainArgs {
            config,
            mode,
            seed,
            iterations,
            batch,
            lr,
            out,
        }),
        Command::Eval {
            config,
            checkpoint,
            trials,
            seed,
            out,
        } => commands::eval(&config, checkpoint.as_deref(), trials, seed, out.as_deref()),
        Command::Compare {
            config,
            barriernet,
            fcnet,
            trials,
            seed,
            out,
        } => commands::compare(&commands::CompareArgs {
            config,
            barriernet,
            fcnet,
            trials,
            seed,
            out,
        }),
        Command::Monitor {
            config,
            trajectory,
            formula,
        } => commands::monitor(&config, &trajectory, formula.as_deref()),
        Command::Ledger { config } => commands::ledger(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STLCBF_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(d) = e.diagnostic() {
                eprintln!("{d}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
