//! `allocsim`: experiment driver for the heart allocation simulator.

mod commands;
mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::config::Versioned;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "allocsim", version, about = "Heart allocation policy simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "allocsim-out")]
    out: PathBuf,
    /// Overrides the seed given in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replications and tuning.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic cohort.
    GenCohort,
    /// Fit a graft, waitlist or acceptance model.
    Fit,
    /// Simulate one policy with replications.
    Simulate,
    /// Compare several policies on the same cohort.
    Compare,
    /// Sweep alpha, max_distance or batch_B.
    Sweep,
    /// Tune blood-type potentials.
    Tune,
}

fn load<T: DeserializeOwned + Versioned>(path: &Path, seed: Option<u64>) -> Result<T, CliError> {
    let mut file: T = config::load(path)?;
    if let Some(seed) = seed {
        file.override_seed(seed);
    }
    Ok(file)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let path = cli.config.as_deref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    if cli.threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let out = &cli.out;
    match cli.command {
        Command::GenCohort => commands::gen_cohort(&load(path, cli.seed)?, out),
        Command::Fit => commands::fit(&load(path, cli.seed)?, out),
        Command::Simulate => commands::simulate(&load(path, cli.seed)?, out),
        Command::Compare => commands::compare(&load(path, cli.seed)?, out),
        Command::Sweep => commands::sweep(&load(path, cli.seed)?, out),
        Command::Tune => commands::tune(&load(path, cli.seed)?, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ALLOCSIM_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
