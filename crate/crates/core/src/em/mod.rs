//! EM estimation of the multi-block latent factor model.
//!
//! Each subject's stacked feature vector is modelled as
//! `x_i = W θ_i + ε_i` with `θ_i = (z_i, b_i1, …, b_iK) ~ N(0, I)` and
//! block-diagonal noise `D`. The E-step computes Gaussian conditional moments
//! of `θ_i`; the M-step updates each block's `[W_Jk | W_Ik]` and `D_k` in
//! closed form.

mod fit;
mod init;
mod mstep;
mod posterior;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::ProjiveParams;

pub use fit::{extract_scores, fit, FitOptions, FitResult, ScoreGroups, TerminationReason};
pub use init::initialize;
pub use mstep::m_step;
pub use posterior::{e_step, log_likelihood};

pub(crate) use posterior::LowRankPrecision;

/// Conditional moments of the latent scores given the data.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorScores {
    /// `n × r_total`, row `i` is `E(θ_i | x_i)`.
    pub mean: DMatrix<f64>,
    /// `Cov(θ_i | x_i)`; the same for every subject.
    pub cov: DMatrix<f64>,
    /// `Σ_i E(θ_i θ_iᵀ | x_i) = n·cov + meanᵀ mean`.
    pub second_moment_sum: DMatrix<f64>,
}

impl PosteriorScores {
    pub fn new(mean: DMatrix<f64>, cov: DMatrix<f64>) -> Self {
        let n = mean.nrows() as f64;
        let second_moment_sum = &cov * n + mean.transpose() * &mean;
        Self {
            mean,
            cov,
            second_moment_sum,
        }
    }

    /// Moments supplied directly, e.g. from an external E-step.
    pub fn from_parts(mean: DMatrix<f64>, cov: DMatrix<f64>, second_moment_sum: DMatrix<f64>) -> Self {
        Self {
            mean,
            cov,
            second_moment_sum,
        }
    }
}

/// How loadings are initialised before the first E-step.
#[derive(Debug, Clone, PartialEq)]
pub enum InitStrategy {
    /// Columns of the Cholesky factor of each block's sample covariance.
    Cholesky,
    /// Independent standard normal entries from a seeded generator.
    RandomNormal(u64),
    /// Externally computed starting values.
    Provided(ProjiveParams),
}

/// Initialisation strategies that can be named on the command line or in a
/// rank grid, where a fixed parameter set makes no sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Cholesky,
    Random,
}

impl InitKind {
    pub fn strategy(self, seed: u64) -> InitStrategy {
        match self {
            Self::Cholesky => InitStrategy::Cholesky,
            Self::Random => InitStrategy::RandomNormal(seed),
        }
    }
}

impl std::str::FromStr for InitKind {
    type Err = crate::error::ProjiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cholesky" => Ok(Self::Cholesky),
            "random" => Ok(Self::Random),
            other => Err(crate::error::ProjiveError::InvalidArgument(format!(
                "unknown init strategy {other:?} (expected cholesky or random)"
            ))),
        }
    }
}

impl std::fmt::Display for InitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cholesky => "cholesky",
            Self::Random => "random",
        })
    }
}
