//! Command-line driver for `sandpile-lab` experiments.
//!
//! Every command writes plot-ready CSV tables, optional JSON-lines records,
//! a `results.json` with the full accumulated state and a `manifest.json`.
//! Data files depend only on the configuration and seed; the manifest also
//! carries wall time and the worker count.

pub mod args;
pub mod checkpoint;
pub mod commands;
pub mod output;

use std::ffi::OsString;

use clap::Parser;
use thiserror::Error;

pub use args::Cli;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SANDPILE_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;
pub const EXIT_CHECKPOINT: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Resource(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Lab(sandpile_lab::Error),
}

impl From<sandpile_lab::Error> for CliError {
    fn from(e: sandpile_lab::Error) -> Self {
        use sandpile_lab::Error as E;
        match e {
            E::ResourceGuard(m) => CliError::Resource(m),
            e @ E::ExactTooLarge { .. } => CliError::Resource(e.to_string()),
            E::Invariant(m) => CliError::Invariant(m),
            E::InvalidArgument(m) | E::Unsupported(m) => CliError::Config(m),
            e => CliError::Lab(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Resource(_) => EXIT_RESOURCE,
            CliError::Invariant(_) => EXIT_INVARIANT,
            CliError::Checkpoint(_) => EXIT_CHECKPOINT,
            CliError::Io { .. } | CliError::Lab(_) => EXIT_RUNTIME,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv`, runs the command and returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let (code, message) = execute(argv);
    if code == EXIT_OK {
        println!("{message}");
    } else {
        eprintln!("{message}");
    }
    code
}

/// Like [`run`], but returns the message instead of printing it.
pub fn execute<I, T>(argv: I) -> (i32, String)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
            return (code, e.render().to_string().trim_end().to_string());
        }
    };
    match commands::dispatch(&cli) {
        Ok(summary) => (EXIT_OK, summary),
        Err(e) => (e.exit_code(), format!("sandpile: {e}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_exit_codes() {
        use sandpile_lab::Error as E;
        assert_eq!(CliError::from(E::ResourceGuard("big".into())).exit_code(), EXIT_RESOURCE);
        assert_eq!(CliError::from(E::Invariant("x".into())).exit_code(), EXIT_INVARIANT);
        assert_eq!(CliError::from(E::InvalidArgument("x".into())).exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::Checkpoint("x".into()).exit_code(), EXIT_CHECKPOINT);
    }

    #[test]
    fn parse_failures_and_help() {
        assert_eq!(execute(["sandpile", "escape"]).0, EXIT_CONFIG);
        let (code, text) = execute(["sandpile", "--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(text.contains("avalanche-tails"));
    }
}
