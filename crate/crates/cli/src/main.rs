//! `rt-infer`: simulate, fit and benchmark R_t estimates from the command line.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod manifest;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<rtinfer::Error> for CliError {
    fn from(e: rtinfer::Error) -> Self {
        use rtinfer::Error::*;
        match e {
            Config(_) | Parse { .. } | Json(_) | NotPositiveDefinite { .. } => Self::Config(e.to_string()),
            Diverged { .. } | Io(_) | Csv(_) => Self::Runtime(e.to_string()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "rt-infer", version, about = "Estimate R_t from sparse test counts")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "RT_INFER_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a ground truth, infections and test results.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the variational posterior to an observation CSV.
    Infer {
        /// `day,positives` CSV.
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sliding-window baseline on an observation CSV. A `cori.mean_delay_shift`
    /// of 0 is replaced by the scheme's typical detection delay.
    Cori {
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every cell of a benchmark grid.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Credible-interval coverage from a benchmark directory.
    Calibrate {
        #[arg(long)]
        results: PathBuf,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated interval levels.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
    },
    /// Repeat the run recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory (default: the manifest's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate { config, seed, out } => commands::simulate(RunConfig::load(&config)?, seed, &out),
        Command::Infer {
            observations,
            config,
            seed,
            out,
            resume,
        } => {
            let config = RunConfig::load(&config)?;
            let x = rtinfer::io::read_counts(&observations)?;
            commands::infer(config, x, resume, seed, &out)
        }
        Command::Cori {
            observations,
            config,
            seed,
            out,
        } => {
            let config = RunConfig::load(&config)?;
            let x = rtinfer::io::read_counts(&observations)?;
            commands::cori(config, x, seed, &out)
        }
        Command::Benchmark { config, seed, out } => commands::benchmark(RunConfig::load(&config)?, seed, &out),
        Command::Calibrate { results, out, levels } => commands::calibrate(&results, levels, &out),
        Command::Replay { manifest, out } => commands::replay(&manifest, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rt-infer: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
