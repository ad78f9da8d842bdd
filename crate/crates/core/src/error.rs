//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("minimum separation is undefined for fewer than two atoms (got {0})")]
    UndefinedSeparation(usize),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("gradient undefined at {0:?}")]
    UndefinedGradient(Vec<f64>),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("ill-conditioned certificate system (condition estimate {condition:.3e})")]
    IllConditionedCertificate { condition: f64 },

    #[error("certificate support does not match the truth support")]
    SupportMismatch,

    #[error("overlapping near regions: epsilon {epsilon} >= half the minimum separation {half_separation}")]
    OverlappingRegions { epsilon: f64, half_separation: f64 },

    #[error("fidelity cutoff 1/tau = {cutoff} is smaller than the certificate band 4m = {band}")]
    BandMismatch { cutoff: f64, band: f64 },

    #[error("insufficient grid: {0}")]
    InsufficientGrid(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
