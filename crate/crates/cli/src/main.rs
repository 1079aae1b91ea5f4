//! Batch entry points for dataset generation, tracking, evaluation and
//! parameter sweeps.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "doatrack", about = "Azimuth tracking of moving speakers: simulation, tracking, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene dataset (mixtures, direct paths, trajectories).
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario base seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Validate the configuration without writing anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Run a tracker (and enhancer) over a dataset.
    Track {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        dry_run: bool,
    },
    /// Compare tracking runs computed on the same dataset.
    Eval {
        #[arg(long)]
        out: PathBuf,
        /// Tracking result directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Grid-evaluate tracker hyperparameters on a dataset.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the default configuration with all knobs.
    DefaultConfig,
}

fn load_config(path: &Option<PathBuf>, seed: Option<u64>) -> anyhow::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.scenario.base_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set_workers(workers: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| anyhow::anyhow!("worker pool: {e}"))?;
    }
    Ok(())
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { config, out, seed, workers, dry_run } => {
            let cfg = load_config(&config, seed).map_err(usage)?;
            set_workers(workers).map_err(usage)?;
            commands::cmd_simulate(&cfg, &out, dry_run)
        }
        Command::Track { config, dataset, out, workers, dry_run } => {
            let cfg = load_config(&config, None).map_err(usage)?;
            set_workers(workers).map_err(usage)?;
            commands::check_compatibility(&cfg, &dataset).map_err(usage)?;
            commands::cmd_track(&cfg, &dataset, &out, dry_run)
        }
        Command::Eval { out, runs } => commands::cmd_eval(&runs, &out),
        Command::Sweep { config, dataset, out, workers } => {
            let cfg = load_config(&config, None).map_err(usage)?;
            set_workers(workers).map_err(usage)?;
            commands::cmd_sweep(&cfg, &dataset, &out)
        }
        Command::DefaultConfig => {
            print!("{}", toml::to_string_pretty(&RunConfig::default())?);
            Ok(())
        }
    }
}

fn usage(e: anyhow::Error) -> anyhow::Error {
    anyhow::Error::new(UsageError(e.to_string()))
}

/// Marker distinguishing configuration errors (exit 2) from runtime
/// failures (exit 3).
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
