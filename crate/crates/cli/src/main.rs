use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Distributionally robust iterative MPC experiments.
#[derive(Debug, Parser)]
#[command(name = "drilmpc", version, about)]
struct Cli {
    /// Worker threads for `sweep` and `replicate` (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write its report.
    Run {
        #[command(flatten)]
        common: Common,
        /// Radius of the ambiguity set, replacing the configured schedule.
        #[arg(long)]
        theta: Option<f64>,
        /// Write a checkpoint after every iteration into `<out>/checkpoints`.
        #[arg(long)]
        checkpoints: bool,
        /// Continue from a checkpoint file.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Run one experiment per radius, each into `<out>/theta_<radius>`.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Radii to sweep.
        #[arg(long = "theta", value_delimiter = ',', default_values_t = [5e-6, 5e-4, 5e-2, 0.5])]
        thetas: Vec<f64>,
    },
    /// Repeat an experiment with independent seeds and tabulate how often
    /// trajectories stay safe under the true distribution.
    Replicate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: Option<f64>,
        /// Number of replications; replication `i` uses seed `seed + i`.
        #[arg(long, default_value_t = 200)]
        n: u64,
    },
    /// Re-verify the invariants of a written report.
    Check {
        /// Configuration the report was produced with.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        /// Directory holding the report files.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration; the benchmark is used when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Random seed, overriding the configured one.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the configured one.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of iterations, overriding the configured one.
    #[arg(long)]
    iterations: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DRILMPC_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
