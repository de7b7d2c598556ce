//! CLI error taxonomy mapped to process exit codes: 2 for configuration
//! problems, 3 for data problems, 4 for numerical failures.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn config(msg: String) -> CliError {
        CliError::Config(msg)
    }

    pub fn data(msg: String) -> CliError {
        CliError::Data(msg)
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Numerical(msg) => write!(f, "numerical error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<plepi_core::ConfigError> for CliError {
    fn from(e: plepi_core::ConfigError) -> CliError {
        CliError::Config(e.0)
    }
}

impl From<plepi_core::DataError> for CliError {
    fn from(e: plepi_core::DataError) -> CliError {
        CliError::Data(e.to_string())
    }
}

impl From<plepi_core::NumericalError> for CliError {
    fn from(e: plepi_core::NumericalError) -> CliError {
        CliError::Numerical(e.to_string())
    }
}

impl From<plepi_core::codebook::CodebookError> for CliError {
    fn from(e: plepi_core::codebook::CodebookError) -> CliError {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> CliError {
        CliError::Data(e.to_string())
    }
}
