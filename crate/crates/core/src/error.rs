//! Error types shared across the pipeline stages.

use core::fmt;

use alloc::string::String;

/// Invalid configuration detected before any work started.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl core::error::Error for ConfigError {}

/// Malformed or incomplete input data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataError {
    /// A field is missing one or more cycles required by the operation.
    IncompleteField { field: usize, missing_cycle: usize },
    /// A metric has no defined value for the given inputs.
    UndefinedMetric(String),
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::IncompleteField {
                field,
                missing_cycle,
            } => write!(f, "field {field} is missing cycle {missing_cycle}"),
            DataError::UndefinedMetric(what) => write!(f, "undefined metric: {what}"),
        }
    }
}

impl core::error::Error for DataError {}

/// Non-finite values where finite arithmetic was required.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NumericalError {
    /// A gradient contained NaN or infinity.
    NonFiniteGradient,
    /// Two weight matrices disagree in shape.
    ShapeMismatch,
}

impl fmt::Display for NumericalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumericalError::NonFiniteGradient => write!(f, "gradient is not finite"),
            NumericalError::ShapeMismatch => write!(f, "weight shapes do not match"),
        }
    }
}

impl core::error::Error for NumericalError {}
