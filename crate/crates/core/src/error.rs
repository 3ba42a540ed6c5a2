//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the solver, priors, model, and samplers.
#[derive(Debug, Error)]
pub enum Error {
    /// A value fell outside its mathematical domain (e.g. density outside
    /// `[0, rho_j]`).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration: inconsistent grid, schedule, or sampler settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// A numerical routine failed (eigensolver, root bracket, non-finite state).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code convention: 2 config, 3 data, 4 numerical/domain.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Csv(_) | Error::Json(_) | Error::Io(_) => 3,
            Error::Domain(_) | Error::Numerical(_) => 4,
        }
    }
}
