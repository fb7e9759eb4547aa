//! `poslab` command-line front end: one subcommand per workflow, JSON configs in, CSV/JSON/SVG
//! results plus a checksummed manifest out.

pub mod commands;
pub mod config;
pub mod output;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "poslab", version, about = "Union-of-subspaces projection toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic union of subspaces.
    Gen(RunArgs),
    /// Coherence, restricted isometry/orthogonality constants and uniqueness of a dictionary.
    Diagnose(RunArgs),
    /// Project samples onto a union of subspaces.
    Project(RunArgs),
    /// Train a small autoencoder.
    TrainAe(RunArgs),
    /// Learn an orthogonal transform folding data onto a union.
    Fold(RunArgs),
    /// Estimate intersections of two branches by coupled cross-projection.
    Intersect(RunArgs),
    /// Train the dual-branch attention block on its toy task.
    Dba(RunArgs),
    /// Sample-complexity counts and covering numbers.
    Complexity(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Diagnose(_) => "diagnose",
            Command::Project(_) => "project",
            Command::TrainAe(_) => "train-ae",
            Command::Fold(_) => "fold",
            Command::Intersect(_) => "intersect",
            Command::Dba(_) => "dba",
            Command::Complexity(_) => "complexity",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Gen(a)
            | Command::Diagnose(a)
            | Command::Project(a)
            | Command::TrainAe(a)
            | Command::Fold(a)
            | Command::Intersect(a)
            | Command::Dba(a)
            | Command::Complexity(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run seed; overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for independent trials.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// Failures of the front end itself; library errors pass through unchanged.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
}

#[derive(Serialize)]
struct ErrorReport {
    error: String,
    message: String,
}

/// Machine-readable name of an error: the library variant, or the front-end category.
pub fn error_kind(e: &anyhow::Error) -> String {
    if let Some(p) = e.downcast_ref::<poslab::Error>() {
        let dbg = format!("{p:?}");
        return dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_owned();
    }
    match e.downcast_ref::<CliError>() {
        Some(CliError::Io { .. }) => "IoError".into(),
        Some(CliError::Config { .. }) => "InvalidConfig".into(),
        Some(CliError::Usage(_)) => "UsageError".into(),
        None => "Error".into(),
    }
}

fn report(kind: String, message: String) {
    let line = serde_json::to_string(&ErrorReport { error: kind, message }).expect("plain strings");
    eprintln!("{line}");
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("POSLAB_LOG", "error");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses arguments, runs the subcommand and returns the process exit code:
/// 0 on success, 1 on a run error, 2 on a usage error. Errors go to stderr as one JSON line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            report("UsageError".into(), e.to_string().trim().to_owned());
            return 2;
        }
    };
    match commands::run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            report(error_kind(&e), format!("{e:#}"));
            1
        }
    }
}
