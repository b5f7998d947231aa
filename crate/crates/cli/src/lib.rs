//! `regforge` command line: phantom generation, training, pairwise
//! registration and cohort evaluation. Every command writes a
//! [`RunManifest`] into its output directory.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod evaluate;
mod gen;
pub mod manifest;
mod register;
mod train;

pub use evaluate::{cmd_evaluate, EvaluateArgs, SUMMARY_JSON};
pub use gen::{cmd_gen_phantoms, GenArgs};
pub use manifest::{RunManifest, RUN_MANIFEST};
pub use register::{cmd_register, RegisterArgs, RegistrationJson, METRICS_CSV, TRANSFORMS_JSON, WARPED_LABEL_PNG, WARPED_MOVING_PNG};
pub use train::{cmd_train, TrainArgs, TRAIN_CONFIG_JSON};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use std::ffi::OsString;
use std::path::Path;

#[derive(Debug, Parser)]
#[command(name = "regforge", version, about = "Weakly supervised multimodal image registration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic phantom cohort.
    GenPhantoms(GenArgs),
    /// Train the affine and deformable networks on a cohort.
    Train(TrainArgs),
    /// Register one moving image to a fixed image.
    Register(RegisterArgs),
    /// Score a cohort before and after registration.
    Evaluate(EvaluateArgs),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<regforge::Error> for CliError {
    fn from(e: regforge::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Seed from the flag (which clap also fills from `REGFORGE_SEED`), else 0.
pub(crate) fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.unwrap_or(0)
}

/// A JSON config file; unreadable or malformed files are usage errors.
pub(crate) fn read_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = regforge::imgcore::io::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("malformed config {}: {e}", path.display())))
}

pub fn execute(cli: Cli) -> CliResult<RunManifest> {
    match cli.command {
        Command::GenPhantoms(a) => cmd_gen_phantoms(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Register(a) => cmd_register(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
