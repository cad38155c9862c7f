use std::path::PathBuf;

/// Errors produced by the analysis pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid sampling interval: {0}")]
    InvalidInterval(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient fit range: {0}")]
    InsufficientRange(String),

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no convergence: {0}")]
    Convergence(String),

    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    #[error("invalid input data: {0}")]
    InvalidData(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
