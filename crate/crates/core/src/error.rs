use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ProjiveError>;

#[derive(Debug, Error)]
pub enum ProjiveError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid ranks: {0}")]
    InvalidRanks(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("feature {feature} of block {block} has zero variance and cannot be scaled")]
    ZeroVariance { block: usize, feature: String },

    #[error("covariate design matrix is rank deficient (rank {rank} of {cols} columns)")]
    RankDeficientCovariates { rank: usize, cols: usize },

    #[error("model covariance is numerically singular (min/max eigenvalue ratio {ratio:e})")]
    SingularCovariance { ratio: f64 },

    #[error(
        "score second-moment matrix of block {block} is singular (min/max eigenvalue ratio {ratio:e}); \
         consider reducing the joint or individual rank"
    )]
    SingularScoreMoment { block: usize, ratio: f64 },

    #[error("sample covariance of block {block} is not positive semidefinite")]
    NotPositiveSemidefinite { block: usize },

    #[error(
        "log-likelihood decreased at iteration {iteration}: {previous} -> {current} \
         (EM monotonicity violated)"
    )]
    NonMonotone {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("scale-constant solver failed: {0}")]
    Solver(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
