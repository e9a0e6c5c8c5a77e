use alloc::string::String;

/// Errors raised by the estimator, channel, and analysis routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected_rows}x{expected_cols}, found {rows}x{cols}")]
    DimensionMismatch {
        what: &'static str,
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("{what} is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { what: &'static str, asymmetry: f64 },

    #[error("{what} is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPositiveSemidefinite { what: &'static str, eigenvalue: f64 },

    #[error("{what} is not positive definite (eigenvalue {eigenvalue:e})")]
    NotPositiveDefinite { what: &'static str, eigenvalue: f64 },

    #[error("invalid argument `{name}` = {value}: {reason}")]
    InvalidArgument {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("target information rate {target} is outside the achievable range ({beta}, 1]")]
    UnreachableRate { target: f64, beta: f64 },

    #[error("slot {index}: measurement presence does not match the delivery bits")]
    InconsistentSlot { index: usize },

    #[error("measurement noise covariance must be diagonal here; whiten the system first")]
    NonDiagonalNoise,

    #[error("{0}")]
    Config(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
