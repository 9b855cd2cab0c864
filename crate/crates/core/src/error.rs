//! Crate-wide error type.

use std::path::PathBuf;

/// Errors surfaced by model fitting, simulation and the CLI pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("variance must be strictly positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("phi must be strictly positive, got {0}")]
    NonPositivePhi(f64),

    #[error("precision matrix is singular even after jitter")]
    SingularPrecision,

    #[error("calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("item id {item} out of range for catalog of {catalog} items")]
    ItemIdOutOfRange { item: usize, catalog: usize },

    #[error("all click labels are identical; logistic regression is degenerate")]
    DegenerateLabels,

    #[error("record {0} has propensity <= 0")]
    MissingPropensity(usize),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("missing input: {0}")]
    MissingInput(PathBuf),

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 missing input, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::Json(_) => 2,
            Error::MissingInput(_) => 3,
            Error::NotPositiveDefinite { .. }
            | Error::NonPositiveVariance(_)
            | Error::NonPositivePhi(_)
            | Error::SingularPrecision
            | Error::CalibrationFailed(_)
            | Error::TrainingDiverged(_) => 4,
            _ => 1,
        }
    }
}
