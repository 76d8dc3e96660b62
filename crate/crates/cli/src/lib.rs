//! The `dnl` command line: training, evaluation, rule extraction and
//! program checking.

pub mod config;
mod commands;

use std::ffi::OsString;

use clap::{Parser, Subcommand};

use dnl_core::assets::AssetError;
use dnl_core::checkpoint::CheckpointError;
use dnl_core::deduction::EngineError;
use dnl_core::envs::EnvError;
use dnl_core::learning::LearnError;
use dnl_core::program::ProgramError;
use dnl_core::rrl::RrlError;

pub use config::{ConfigError, RunConfig};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_PROGRAM: i32 = 4;
pub const EXIT_SCHEMA: i32 = 5;
pub const EXIT_DIVERGED: i32 = 6;

/// Environment variable that overrides the configured seed.
pub const SEED_VAR: &str = "DNL_SEED";

#[derive(Debug, Parser)]
#[command(name = "dnl", version, about = "Differentiable neural-logic rule learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a config file, writing metrics and checkpoints.
    Train {
        #[arg(long)]
        config: std::path::PathBuf,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured number of epochs or episodes.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate a checkpoint without learning.
    Eval {
        #[arg(long)]
        checkpoint: std::path::PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the crisp clauses of a checkpoint and verify them.
    Extract {
        #[arg(long)]
        checkpoint: std::path::PathBuf,
        #[arg(long, default_value_t = dnl_core::extract::DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Random instances used for verification.
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Parse and validate a program file or `asset:<name>`.
    Check {
        #[arg(long)]
        program: String,
    },
}

/// Runs the command line and returns the process exit status. Diagnostics go
/// to stderr, results to stdout.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let seed_override = match std::env::var(SEED_VAR) {
        Ok(v) => match v.trim().parse::<u64>() {
            Ok(s) => Some(s),
            Err(_) => {
                eprintln!("error: {SEED_VAR}={v:?} is not an unsigned integer");
                return EXIT_USAGE;
            }
        },
        Err(_) => None,
    };
    let mut out = std::io::stdout().lock();
    let result = match cli.command {
        Command::Train { config, seed, episodes } => {
            commands::train(&config, seed_override.or(seed), episodes, &mut out)
        }
        Command::Eval { checkpoint, episodes, seed } => {
            commands::eval(&checkpoint, episodes, seed_override.or(seed), &mut out)
        }
        Command::Extract { checkpoint, threshold, trials } => {
            commands::extract(&checkpoint, threshold, trials, &mut out)
        }
        Command::Check { program } => commands::check(&program, &mut out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// Maps an error chain to a stable exit status.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_USAGE;
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
        if cause.is::<ProgramError>() || cause.is::<AssetError>() {
            return EXIT_PROGRAM;
        }
        if let Some(e) = cause.downcast_ref::<CheckpointError>() {
            return if matches!(e, CheckpointError::Io(_)) { EXIT_IO } else { EXIT_SCHEMA };
        }
        if let Some(e) = cause.downcast_ref::<EngineError>() {
            return engine_code(e);
        }
        if cause.is::<EnvError>() {
            return EXIT_SCHEMA;
        }
        if let Some(e) = cause.downcast_ref::<LearnError>() {
            return match e {
                LearnError::Engine(e) => engine_code(e),
                LearnError::Divergence { .. } => EXIT_DIVERGED,
                LearnError::NoExamples => EXIT_PROGRAM,
                LearnError::Config(_) => EXIT_USAGE,
            };
        }
        if let Some(e) = cause.downcast_ref::<RrlError>() {
            return match e {
                RrlError::Engine(e) => engine_code(e),
                RrlError::Divergence { .. } => EXIT_DIVERGED,
                RrlError::Config(_) => EXIT_USAGE,
                RrlError::Env(_) | RrlError::UnknownTarget(_) | RrlError::AmbiguousTarget(_) => EXIT_SCHEMA,
            };
        }
    }
    1
}

fn engine_code(e: &EngineError) -> i32 {
    match e {
        EngineError::Program(_) => EXIT_PROGRAM,
        EngineError::TmaxRequired | EngineError::InvalidTmax => EXIT_USAGE,
        _ => EXIT_SCHEMA,
    }
}
