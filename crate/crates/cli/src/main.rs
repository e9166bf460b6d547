//! `emsm`: sensitivity analysis for treatment effects under unmeasured
//! confounding from the command line.
//!
//! Every subcommand reads a JSON configuration and writes `results.json` and
//! `results.csv` into the output directory. The exit code is 0 on success, 2
//! when some cells failed and 1 on a fatal error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;
mod plot;

#[derive(Debug, Parser)]
#[command(name = "emsm", version, about = "Sensitivity analysis under unmeasured confounding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Population bounds from stratum-level outcome laws, no data needed.
    Bounds(CommonArgs),
    /// Doubly robust sample bounds with CAL or RCAL model fitting.
    Estimate(CommonArgs),
    /// Ding-VanderWeele bounds for binary outcomes with bootstrap intervals.
    Dv(CommonArgs),
    /// Compare closed-form bounds with brute-force search on random instances.
    Oracle(CommonArgs),
    /// Generate synthetic data with a known sharp bound.
    Simulate(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for the output files.
    #[arg(long, default_value = "results")]
    pub out_dir: PathBuf,
    /// Also write `fig_<estimand>.svg` figures.
    #[arg(long)]
    pub plots: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Bounds(a) => commands::bounds::run(a),
        Command::Estimate(a) => commands::estimate::run(a),
        Command::Dv(a) => commands::dv::run(a),
        Command::Oracle(a) => commands::oracle::run(a),
        Command::Simulate(a) => commands::simulate::run(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("warning: some cells failed; see the status column");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
