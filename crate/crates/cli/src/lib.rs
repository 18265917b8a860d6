//! Command-line front end: TOML experiment configs, ensemble runners, CSV and
//! SVG outputs, and image statistics.

pub mod config;
pub mod images;
pub mod run;
pub mod svg;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

/// Exit code for configuration errors.
pub const EXIT_CONFIG: u8 = 1;
/// Exit code for failures while running.
pub const EXIT_RUNTIME: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<swgtoy_core::Error> for CliError {
    fn from(e: swgtoy_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "swgtoy",
    version,
    about = "Guidance experiments on finite-dataset diffusion models"
)]
pub struct Cli {
    /// Worker threads for ensemble sampling (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Base seed; overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample every (method, weight) cell and write ensembles, trajectories and plots.
    Toy(RunArgs),
    /// Sample every cell and write only the report and weight curves.
    Sweep(RunArgs),
    /// Sliding-window guidance on grid data, with overlap grids and coherence.
    SwgDemo(RunArgs),
    /// Saturation and RMS contrast of PPM (and PNG) images.
    Metrics {
        /// Image files or directories.
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run_experiment(args: &RunArgs, mode: run::Mode) -> Result<(), CliError> {
    let exp = config::load(&args.config)?;
    let out = args
        .out
        .clone()
        .or_else(|| exp.config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let seed = args.seed.unwrap_or(exp.config.seed);
    let cells = run::run(&exp, mode, &out, seed)?;
    tracing::info!(cells = cells.len(), out = %out.display(), "done");
    Ok(())
}

/// Runs a parsed command line.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match &cli.command {
        Command::Toy(a) => run_experiment(a, run::Mode::Toy),
        Command::Sweep(a) => run_experiment(a, run::Mode::Sweep),
        Command::SwgDemo(a) => run_experiment(a, run::Mode::SwgDemo),
        Command::Metrics { paths, out } => {
            let table = images::run_metrics(paths)?;
            let csv = table.to_csv();
            match out {
                Some(path) => std::fs::write(path, csv).map_err(|e| CliError::io(path, e)),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
    }
}
