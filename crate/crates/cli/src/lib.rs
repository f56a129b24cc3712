//! File formats, CSV ingestion, SVG rendering, and the command
//! implementations behind the `covxplain` binary.
//!
//! The numeric work lives in `covxplain-core`; this crate owns everything
//! that touches the filesystem. All outputs are deterministic: rerunning a
//! command with the same resolved configuration reproduces every CSV, JSON,
//! and SVG byte for byte.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

pub mod commands;
pub mod csvio;
pub mod formats;
pub mod svg;

pub use covxplain_core as core;

/// Process exit codes: 0 success, 2 usage or configuration problems,
/// 3 numeric failures (divergence, non-finite values, degenerate inputs).
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    Core(covxplain_core::Error),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    Csv {
        path: PathBuf,
        source: csv::Error,
    },
    Config(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Json { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Csv { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Config(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<covxplain_core::Error> for CliError {
    fn from(e: covxplain_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// Exit code for this failure, per the 0/2/3 contract.
    pub fn exit_code(&self) -> ExitCode {
        use covxplain_core::Error as E;
        let code = match self {
            CliError::Core(e) => match e {
                E::TrainingDiverged { .. }
                | E::NonFinite { .. }
                | E::NonFiniteForward { .. }
                | E::NegligibleUncertainty { .. }
                | E::AllDrawsDiscarded { .. } => EXIT_NUMERIC,
                _ => EXIT_CONFIG,
            },
            _ => EXIT_CONFIG,
        };
        ExitCode::from(code)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Worker count for the benchmark: the `--threads` flag when given, the
/// `COVXPLAIN_THREADS` variable otherwise, and the library default (one
/// worker per CPU) when neither is set.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        return Ok(Some(n));
    }
    match std::env::var("COVXPLAIN_THREADS") {
        Ok(raw) => {
            let n: usize = raw.parse().map_err(|_| {
                CliError::config(format!(
                    "COVXPLAIN_THREADS must be a positive integer, got '{raw}'"
                ))
            })?;
            if n == 0 {
                return Err(CliError::config("COVXPLAIN_THREADS must be at least 1"));
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_errors_map_to_exit_three() {
        let e = CliError::Core(covxplain_core::Error::TrainingDiverged { epoch: 3 });
        assert_eq!(e.exit_code(), ExitCode::from(3));
        let e = CliError::Core(covxplain_core::Error::NegligibleUncertainty { s2: 0.0 });
        assert_eq!(e.exit_code(), ExitCode::from(3));
    }

    #[test]
    fn config_errors_map_to_exit_two() {
        assert_eq!(CliError::config("bad").exit_code(), ExitCode::from(2));
        let e = CliError::Core(covxplain_core::Error::MissingColumn { name: "t".into() });
        assert_eq!(e.exit_code(), ExitCode::from(2));
        let e = CliError::Core(covxplain_core::Error::SimpleLrpSignedInput { layer: 0 });
        assert_eq!(e.exit_code(), ExitCode::from(2));
    }
}
