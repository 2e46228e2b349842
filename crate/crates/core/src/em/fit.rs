use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{BlockRanks, MultiBlockData, NoiseModel, ProjiveParams, StackedLayout};
use crate::error::{ProjiveError, Result};

use super::{initialize, m_step, InitStrategy, LowRankPrecision, PosteriorScores};

/// Slack allowed on a log-likelihood decrease before it is reported as a
/// monotonicity violation: `1e-8 · (|ℓ| + 1)`.
pub const MONOTONE_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub noise_model: NoiseModel,
    /// Stop when `|ℓ_t − ℓ_{t−1}| / (|ℓ_{t−1}| + 1) < tol`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            noise_model: NoiseModel::Isotropic,
            tol: 1e-8,
            max_iters: 5000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Tolerance,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ProjiveParams,
    /// Posterior moments at `params`.
    pub scores: PosteriorScores,
    /// Log-likelihood at the parameters entering each iteration; the last
    /// entry is the log-likelihood of `params`.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub termination: TerminationReason,
    pub aic: f64,
    pub bic: f64,
    pub n_subjects: usize,
    /// Free-parameter count behind `aic` and `bic`.
    pub n_parameters: usize,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace has at least one entry")
    }
}

/// Fits the model by EM from the given starting strategy.
///
/// Each iteration evaluates the E-step and log-likelihood at the current
/// parameters, checks convergence against the previous value, then applies
/// the M-step. A decrease beyond [`MONOTONE_SLACK`] is a hard error.
pub fn fit(
    data: &MultiBlockData,
    ranks: &BlockRanks,
    strategy: &InitStrategy,
    options: &FitOptions,
) -> Result<FitResult> {
    if !(options.tol > 0.0) {
        return Err(ProjiveError::InvalidArgument(format!(
            "tol must be positive, got {}",
            options.tol
        )));
    }
    if options.max_iters == 0 {
        return Err(ProjiveError::InvalidArgument("max_iters must be at least 1".into()));
    }
    let max_mean = data.max_abs_feature_mean();
    if max_mean > 1e-6 {
        log::warn!("data are not centred (largest feature mean {max_mean:e}); consider preprocessing");
    }

    let layout = StackedLayout::new(&data.dims(), ranks)?;
    let mut params = initialize(data, ranks, strategy, options.noise_model)?;
    params.check_joint_full_rank()?;
    let x = data.stacked();

    let mut trace = Vec::new();
    let mut termination = TerminationReason::MaxIters;
    let mut scores;
    loop {
        let (s, ll) = LowRankPrecision::new(&params, &layout)?.evaluate(&x);
        scores = s;
        if let Some(&prev) = trace.last() {
            let scale = f64::abs(prev) + 1.0;
            if ll < prev - MONOTONE_SLACK * scale {
                return Err(ProjiveError::NonMonotone {
                    iteration: trace.len() + 1,
                    previous: prev,
                    current: ll,
                });
            }
            trace.push(ll);
            if (ll - prev).abs() / scale < options.tol {
                termination = TerminationReason::Tolerance;
                break;
            }
        } else {
            trace.push(ll);
        }
        if trace.len() >= options.max_iters {
            break;
        }
        params = m_step(data, &scores, &layout, options.noise_model)?;
    }

    let ll = *trace.last().expect("at least one iteration");
    let m = params.n_free_parameters();
    let n = data.n_subjects();
    Ok(FitResult {
        aic: -2.0 * ll + 2.0 * m as f64,
        bic: -2.0 * ll + m as f64 * (n as f64).ln(),
        params,
        scores,
        iterations: trace.len(),
        loglik_trace: trace,
        converged: termination == TerminationReason::Tolerance,
        termination,
        n_subjects: n,
        n_parameters: m,
    })
}

/// Posterior mean scores split into the joint group and one group per block.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGroups {
    /// `n × r_J`
    pub joint: DMatrix<f64>,
    /// `n × r_Ik` per block.
    pub individual: Vec<DMatrix<f64>>,
}

impl ScoreGroups {
    /// Groups concatenated in canonical order `(z, b_1, …, b_K)`.
    pub fn concat(&self) -> DMatrix<f64> {
        let n = self.joint.nrows();
        let r: usize = self.joint.ncols() + self.individual.iter().map(|m| m.ncols()).sum::<usize>();
        let mut out = DMatrix::zeros(n, r);
        out.columns_mut(0, self.joint.ncols()).copy_from(&self.joint);
        let mut col = self.joint.ncols();
        for m in &self.individual {
            out.columns_mut(col, m.ncols()).copy_from(m);
            col += m.ncols();
        }
        out
    }
}

pub fn extract_scores(result: &FitResult, layout: &StackedLayout) -> ScoreGroups {
    let mean = &result.scores.mean;
    let slice = |cols: std::ops::Range<usize>| mean.columns(cols.start, cols.len()).into_owned();
    ScoreGroups {
        joint: slice(layout.joint_cols()),
        individual: (0..layout.n_blocks()).map(|k| slice(layout.indiv_cols(k))).collect(),
    }
}
