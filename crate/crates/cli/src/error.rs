use std::fmt;
use std::path::Path;

use dsiv_core::simgen::DataError;
use dsiv_core::Error;

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;
pub const EXIT_IO: u8 = 4;

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            msg: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            msg: msg.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError {
            code: EXIT_IO,
            msg: format!("{}: {e}", path.display()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

fn data_code(e: &DataError) -> u8 {
    match e {
        DataError::Config(_) => EXIT_CONFIG,
        DataError::Io { .. } => EXIT_IO,
        DataError::Parse { .. } | DataError::MissingColumn(_) | DataError::Schema(_) => EXIT_DATA,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Divergence { .. } => EXIT_DIVERGENCE,
            Error::Io { .. } => EXIT_IO,
            Error::Format(_) => EXIT_DATA,
            Error::Data(d) => data_code(d),
            Error::Config(_) | Error::Contract(_) | Error::Nn(_) | Error::Tensor(_) => EXIT_CONFIG,
        };
        CliError {
            code,
            msg: e.to_string(),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError {
            code: data_code(&e),
            msg: e.to_string(),
        }
    }
}
