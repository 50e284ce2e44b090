//! Command-line driver: dataset generation, training, evaluation,
//! augmentation preview and the ablation grid.
//!
//! Exit codes: 0 ok, 2 configuration, 3 I/O, 4 numeric failure, 5 shape
//! mismatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;
pub mod dataset;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_SHAPE: i32 = 5;

/// Worker-count override; unset means sequential mode.
pub const THREADS_ENV: &str = "CIATR_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Shape(_) => EXIT_SHAPE,
        }
    }
}

impl From<ciatr_core::Error> for CliError {
    fn from(e: ciatr_core::Error) -> Self {
        use ciatr_core::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidDimensions { .. } | E::OutOfFrame { .. } | E::InvalidMask(_) | E::InvalidConfig { .. } => {
                CliError::Config(msg)
            }
            E::NonFinite { .. } | E::NonFiniteLoss { .. } => CliError::Numeric(msg),
            E::DataLength { .. } | E::ShapeMismatch(_) => CliError::Shape(msg),
            E::Checkpoint(_) | E::Pgm(_) | E::Io(_) => CliError::Io(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Cross-entropy only.
    CeOnly,
    /// Cross-entropy with augmentation.
    Augment,
    /// Augmentation plus the discrimination loss.
    Full,
}

impl From<Ablation> for ciatr_core::Variant {
    fn from(a: Ablation) -> Self {
        match a {
            Ablation::CeOnly => ciatr_core::Variant::CeOnly,
            Ablation::Augment => ciatr_core::Variant::Augment,
            Ablation::Full => ciatr_core::Variant::AugmentLd,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ciatr", version, about = "Causal-intervention augmentation for radar target recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic confounded dataset into data_dir.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train on data_dir and write the checkpoint, metrics and evaluation to out_dir.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the ablation flags.
        #[arg(long, value_enum)]
        ablate: Option<Ablation>,
    },
    /// Evaluate a checkpoint on the test split and print the report as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
    },
    /// Write every stage of `count` augmentation draws of one image to out_dir.
    AugmentPreview {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 3)]
        count: u32,
    },
    /// Run the seeds x n x variant grid, resuming completed cells.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Reads the worker count from the environment.
pub fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::Config(format!("invalid value for `{THREADS_ENV}`: `{v}`"))),
    }
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { config } => commands::gen_data(&RunConfig::load(&config)?),
        Command::Train { config, ablate } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(a) = ablate {
                ciatr_core::Variant::from(a).apply(&mut cfg.train);
            }
            cfg.train.threads = threads_from_env()?;
            commands::train(&cfg)
        }
        Command::Eval { checkpoint, data_dir } => {
            let report = commands::eval(&checkpoint, &data_dir)?;
            print!("{report}");
            Ok(())
        }
        Command::AugmentPreview { config, image, count } => {
            commands::augment_preview(&RunConfig::load(&config)?, &image, count).map(|_| ())
        }
        Command::Experiment { config } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.train.threads = threads_from_env()?;
            commands::experiment(&cfg).map(|_| ())
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
