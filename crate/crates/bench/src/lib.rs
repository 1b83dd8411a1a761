//! Chain-walk benchmark harness: experiment configs, sweeps and CSV outputs
//! for the LSTD estimators in `pmc_lstd`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod sweep;

use thiserror::Error;

pub use config::ConfigError;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: pmc_lstd::Error,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("V* is identically zero, NMSE is undefined")]
    ZeroDenominator,
}
