//! Command-line front end: one subcommand per pipeline stage.
//!
//! Exit codes:
//!
//! | code | meaning                                              |
//! |------|------------------------------------------------------|
//! | 0    | success                                              |
//! | 1    | internal error                                       |
//! | 2    | bad command line (unknown flag, missing argument)    |
//! | 3    | unreadable or invalid input (files, config)          |
//! | 4    | backend unavailable or failing                       |
//! | 5    | `--check` found a violation                          |

mod commands;
mod config;

pub use config::{ConfigError, EvalConfig, InferConfig, RunConfig, ServiceSection, DATA_DIR_ENV};

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;
pub const EXIT_CHECK: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Backend(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Backend(_) => EXIT_BACKEND,
            CliError::Check(_) => EXIT_CHECK,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "amodal-kit", version, about = "Synthetic amodal-completion data, order-grounded sample construction, stepwise inference, toy diffusion training, evaluation and a review service.")]
#[command(after_help = "Exit codes: 0 ok, 1 internal error, 2 bad command line, 3 unreadable or invalid input, 4 backend unavailable or failing, 5 --check violation.\n\
Backends: oracle | heuristic | toy:<full.ckpt>[,<partial.ckpt>] | remote:<url>.")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available cores. Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Exit with status 5 when the command's acceptance condition fails.
    #[arg(long, global = true)]
    pub check: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InferMode {
    /// One occluder at a time, nearest first.
    Stepwise,
    /// One-shot completion with several variations.
    Full,
    /// Whole-image pass, then a reduced-strength pass on the region of interest.
    TwoPass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainMode {
    Full,
    Partial,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample synthetic layered scenes and write them as a dataset.
    Synth {
        #[arg(long)]
        scenes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build self-supervised training samples from a dataset.
    Construct {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Samples per visible instance.
        #[arg(long, default_value_t = 1)]
        per_instance: usize,
        /// Generated occluders per sample (their union is used).
        #[arg(long, default_value_t = 1)]
        occluders: usize,
        /// Skip the reduction by existing occluders (regression comparison only).
        #[arg(long)]
        naive: bool,
    },
    /// Complete every occluded instance of a dataset.
    Infer {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        backend: String,
        #[arg(long, value_enum, default_value_t = InferMode::Stepwise)]
        mode: InferMode,
        #[arg(long)]
        out: PathBuf,
        /// Variations per instance in full mode; defaults to the config.
        #[arg(long)]
        variations: Option<usize>,
        /// Lowest acceptable best IoU under --check.
        #[arg(long, default_value_t = 1.0)]
        min_iou: f64,
    },
    /// Train a toy denoiser on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = TrainMode::Full)]
        mode: TrainMode,
        /// Checkpoint path; the loss curve goes next to it as .curve.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        time_budget_secs: Option<f64>,
    },
    /// Score predictions written by `infer`.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        /// Comma-separated best-of-k list; defaults to the config.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dataset statistics; --check compares manifest numbers with the files.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the review-queue HTTP service.
    Serve {
        #[arg(long, env = DATA_DIR_ENV)]
        data_dir: Option<PathBuf>,
        /// Dataset to enqueue on start.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "heuristic")]
        backend: String,
        /// Refinement backend: identity or any backend spec.
        #[arg(long, default_value = "identity")]
        refiner: String,
    },
    /// Export annotated review items as a dataset.
    Export {
        #[arg(long, env = DATA_DIR_ENV)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args`, runs, and returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    run_from(std::env::args_os())
}
