use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("missing value at row {row}, column `{col}`")]
    MissingValue { row: usize, col: String },

    #[error("outcome declared binary but value {value} at row {row} is not 0 or 1")]
    NonBinaryOutcome { row: usize, value: f64 },

    #[error("column `{0}` has fewer than two observed levels")]
    SingleLevelFactor(String),

    #[error("row index {0} out of range")]
    IndexOutOfRange(usize),

    #[error("design matrix is rank deficient; dependent columns: {0:?}")]
    RankDeficientDesign(Vec<String>),

    #[error("optimizer did not converge after {iterations} iterations (gradient max-norm {gradient_norm:e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance matrix is not positive semidefinite (eigenvalue {0:e})")]
    NonPsdCovariance(f64),

    #[error("{failed} of {total} bootstrap replicates failed to fit")]
    TooManyFailures { failed: usize, total: usize },

    #[error("need at least 2 replicates, got {0}")]
    TooFewReplicates(usize),

    #[error("dichotomous oracle requires J=K=2, got J={j}, K={k}")]
    UnsupportedDims { j: usize, k: usize },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::MissingValue { .. }
                | Error::NonBinaryOutcome { .. }
                | Error::SingleLevelFactor(_)
                | Error::IndexOutOfRange(_)
                | Error::Csv(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Invalid(_)
                | Error::UnsupportedDims { .. }
        )
    }
}
