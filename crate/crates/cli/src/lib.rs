//! Command-line driver for δ-on-time packet delivery studies.
//!
//! Four subcommands cover the workflow end to end:
//!
//! * `analytic` — closed-form per-packet probabilities, expected counts,
//!   and repeat-protocol tails from an experiment file.
//! * `solve` — value-iteration policy optimization with CSV policy
//!   export and optional model dumps.
//! * `simulate` — slot-level Monte Carlo in uncontrolled or scheduled
//!   mode, with optional closed-form comparison columns.
//! * `reproduce` — canned experiment recipes that regenerate the
//!   library's reference result sets as CSV files.
//!
//! Failures map to stable exit codes by category: configuration errors
//! exit 2, I/O failures 3, solver non-convergence 4, and semantic
//! validation failures 5, each printing `error[category]: …` on stderr.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod figures;

/// Command failures, categorized for exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or self-contradictory configuration (exit 2).
    #[error("{0}")]
    Config(String),
    /// Filesystem failures (exit 3).
    #[error("{0}")]
    Io(String),
    /// The solver gave up before reaching its threshold (exit 4).
    #[error("{0}")]
    Convergence(String),
    /// Structurally valid input with semantically invalid values (exit 5).
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    /// Stable category label used in the stderr prefix.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Convergence(_) => "convergence",
            CliError::Validation(_) => "validation",
        }
    }

    /// Stable process exit code.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Convergence(_) => 4,
            CliError::Validation(_) => 5,
        }
    }
}

/// Top-level argument grammar.
#[derive(Debug, Parser)]
#[command(
    name = "ontime",
    version,
    about = "δ-on-time packet delivery: analytics, policy optimization, simulation"
)]
pub struct Cli {
    /// The subcommand to run.
    #[command(subcommand)]
    pub command: Command,
}

/// Subcommands.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form quantities from an experiment file.
    Analytic {
        /// Experiment TOML file.
        #[arg(long)]
        config: PathBuf,
        /// Write results as CSV to this path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print results as JSON on stdout instead of a summary.
        #[arg(long)]
        json: bool,
    },
    /// Optimize the per-state action policy by value iteration.
    Solve {
        /// Experiment TOML file.
        #[arg(long)]
        config: PathBuf,
        /// Write the optimized policy as CSV to this path.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Dump the full transition/reward model as CSV to this path.
        #[arg(long = "dump-model")]
        dump_model: Option<PathBuf>,
        /// Print solver diagnostics as JSON on stdout.
        #[arg(long)]
        json: bool,
    },
    /// Monte Carlo simulation of the packet stream.
    Simulate {
        /// Experiment TOML file.
        #[arg(long)]
        config: PathBuf,
        /// Follow this policy CSV instead of transmitting immediately.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Write pooled results as CSV to this path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also compute the matching closed-form/recursion prediction.
        #[arg(long)]
        theory: bool,
        /// Print pooled results as JSON on stdout.
        #[arg(long)]
        json: bool,
    },
    /// Regenerate a reference result set.
    Reproduce {
        /// Which result set: 3, 4, 7, 8, 9, 10, or 11.
        #[arg(long)]
        figure: u8,
        /// Directory for the CSV output (default `figures/`).
        #[arg(long)]
        outdir: Option<PathBuf>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the replication count.
        #[arg(long)]
        replications: Option<u32>,
        /// Override the packets per replication.
        #[arg(long)]
        packets: Option<u64>,
        /// Override the recipe's parameter grid (comma-separated numbers).
        #[arg(long)]
        grid: Option<String>,
    },
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analytic { config, out, json } => {
            commands::analytic(&config, out.as_deref(), json)
        }
        Command::Solve { config, policy, dump_model, json } => {
            commands::solve(&config, policy.as_deref(), dump_model.as_deref(), json)
        }
        Command::Simulate { config, policy, out, theory, json } => {
            commands::simulate(&config, policy.as_deref(), out.as_deref(), theory, json)
        }
        Command::Reproduce { figure, outdir, seed, replications, packets, grid } => {
            let grid = match grid {
                Some(text) => Some(figures::parse_grid(&text)?),
                None => None,
            };
            let options = figures::FigureOptions {
                outdir: outdir.unwrap_or_else(|| PathBuf::from("figures")),
                seed,
                replications,
                packets,
                grid,
            };
            figures::reproduce(figure, &options)
        }
    }
}
