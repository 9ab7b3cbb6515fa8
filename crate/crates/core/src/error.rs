use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("invalid data: {0}")]
    Validation(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("adjacency graph is disconnected: no path between regions {0} and {1}")]
    Disconnected(usize, usize),
    #[error("simulation diverged at week {week}: rate {rate:e} exceeds {limit:e}")]
    Divergence { week: usize, rate: f64, limit: f64 },
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("sampler initialization failed after {0} attempts")]
    Initialization(usize),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
