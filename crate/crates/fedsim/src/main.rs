//! `fedsim` — deterministic federated-learning simulator.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error,
//! 4 oracle failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedsim::commands;

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Deterministic federated-learning simulator: attacks, defenses, robust aggregation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write rounds.csv, summary.json, and
    /// config_resolved.json.
    Run {
        /// Config file, or a previous run directory (its
        /// config_resolved.json is used).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seed list overriding the config's `seeds`.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Run one experiment per value of a swept key; writes one
    /// sub-directory per value plus sweep_summary.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// One of: num_clients, attacker_ratio, beta, aggregator, attack,
        /// defense_enabled.
        #[arg(long)]
        axis: String,
        /// Comma-separated values for the axis.
        #[arg(long)]
        values: String,
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Re-simulate a config (or run directory) and write one analysis CSV.
    Analyze {
        /// One of: surface, similarity, recall. With a sweep directory,
        /// recall additionally aggregates per swept value.
        #[arg(long)]
        kind: String,
        /// Config file, run directory, or (for recall) sweep directory.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the numerics against independent references.
    Oracle {
        /// One of: gradcheck, aggregators, attacks.
        suite: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out, seeds } => commands::cmd_run(config, out, seeds.as_deref()),
        Command::Sweep {
            config,
            out,
            axis,
            values,
            seeds,
        } => commands::cmd_sweep(config, out, axis, values, seeds.as_deref()),
        Command::Analyze { kind, config, out } => commands::cmd_analyze(kind, config, out),
        Command::Oracle { suite } => commands::cmd_oracle(suite),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
