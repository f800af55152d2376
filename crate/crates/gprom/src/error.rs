//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time vector must not be empty")]
    EmptyTimeVector,

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("model structure requires inputs but none were provided")]
    MissingInputs,

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("matrix is numerically singular")]
    NumericallySingular,

    #[error("weight factorization failed: non-positive eigenvalue persists at tau = {tau:.3e}")]
    NonPositiveEigenvalue { tau: f64 },

    #[error("snapshot matrix is rank deficient: requested rank {requested}, numerical rank {available}")]
    RankDeficient { requested: usize, available: usize },

    #[error("regression system is singular (rank-deficient data matrix with zero prior variance)")]
    SingularSystem,

    #[error("posterior covariance is not positive definite")]
    CovarianceNotPositiveDefinite,

    #[error("operator posterior for row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("hyperparameter optimization produced no finite objective value")]
    AllStartsFailed,

    #[error("every prior-variance candidate produced an unstable model")]
    AllUnstable,

    #[error("step size underflow at t = {t:.6e}")]
    StepSizeUnderflow { t: f64 },

    #[error("integrator exceeded the step budget at t = {t:.6e}")]
    MaxStepsExceeded { t: f64 },

    #[error("Newton iteration diverged at t = {t:.6e}")]
    NewtonDivergence { t: f64 },

    #[error("nonphysical state: {0}")]
    NonphysicalState(String),

    #[error("{failed} of {total} prediction samples failed to integrate")]
    PredictionFailures { failed: usize, total: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage that produced it.
    pub fn stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

/// Extension for tagging results with a pipeline stage.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.stage(stage))
    }
}
