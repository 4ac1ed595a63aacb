use thiserror::Error;

use petseg_core::nifti::NiftiError;
use petseg_core::Error as CoreError;

/// Process exit codes. Kept in sync with the `--help` epilogue.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const IO: i32 = 4;
    pub const NIFTI: i32 = 5;
    pub const WEIGHTS: i32 = 6;
    pub const INVALID_INPUT: i32 = 7;
    pub const NUMERIC: i32 = 8;
}

pub const EXIT_CODE_HELP: &str = "\
Exit codes:
  0  success
  1  internal error
  2  invalid command line
  3  malformed or invalid configuration file
  4  missing file or other I/O failure
  5  unreadable or unsupported NIfTI file
  6  unreadable weight file or architecture mismatch
  7  invalid input data (shapes, spacings, masks, parameters, CSV)
  8  numerical failure (non-finite values)

Errors are printed to stderr as one JSON object per line.";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            CliError::Io(e.to_string())
        } else {
            CliError::Input(format!("csv: {e}"))
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<NiftiError> for CliError {
    fn from(e: NiftiError) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io(_) => exit::IO,
            CliError::Input(_) => exit::INVALID_INPUT,
            CliError::Core(e) => match e {
                CoreError::Io(_) => exit::IO,
                CoreError::Nifti(_) => exit::NIFTI,
                CoreError::Weights(_) | CoreError::Fingerprint { .. } | CoreError::EnsembleMismatch(_) | CoreError::Descriptor(_) => {
                    exit::WEIGHTS
                }
                CoreError::Numeric(_) => exit::NUMERIC,
                _ => exit::INVALID_INPUT,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            exit::CONFIG => "config",
            exit::IO => "io",
            exit::NIFTI => "nifti",
            exit::WEIGHTS => "weights",
            exit::NUMERIC => "numeric",
            exit::INVALID_INPUT => "invalid_input",
            _ => "internal",
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
