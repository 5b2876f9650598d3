//! Experiment harness: instance generation, K-grid sweeps of the three
//! critics, diversity tables, the self-check suite and slope fits.

pub mod config;
pub mod experiment;
pub mod plot;

use thiserror::Error;

/// Results tables carry this version in their first column.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] gopo::error::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl BenchError {
    /// 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Core(gopo::error::Error::Io { .. } | gopo::error::Error::Parse { .. } | gopo::error::Error::Json(_)) => 2,
            _ => 1,
        }
    }
}
