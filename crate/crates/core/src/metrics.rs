//! Subspace-recovery scores.
//!
//! The scaled chordal norm compares column spaces of possibly different
//! rank: with principal angles `θ_1..θ_q` between the two spaces and
//! `q` the smaller numerical rank, `δ* = sqrt(Σ sin²θ_m) / q`. The sum of
//! squared sines is the squared Frobenius norm of the smaller basis minus
//! its projection onto the larger one.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::em::FitResult;
use crate::error::{ProjiveError, Result};
use crate::linalg::{frobenius_sq, orthonormal_basis};
use crate::sim::{SimTruth, VarianceExplained};

pub fn chordal_norm(f1: &DMatrix<f64>, f2: &DMatrix<f64>) -> Result<f64> {
    if f1.nrows() != f2.nrows() {
        return Err(ProjiveError::Shape(format!(
            "chordal norm needs equal row counts, got {} and {}",
            f1.nrows(),
            f2.nrows()
        )));
    }
    let q1 = orthonormal_basis(f1);
    let q2 = orthonormal_basis(f2);
    if q1.ncols() == 0 || q2.ncols() == 0 {
        return Err(ProjiveError::InvalidArgument(
            "chordal norm of a zero-rank matrix".into(),
        ));
    }
    let (small, large) = if q1.ncols() <= q2.ncols() {
        (&q1, &q2)
    } else {
        (&q2, &q1)
    };
    let q = small.ncols();
    let residual = small - large * (large.transpose() * small);
    let sum_sin_sq = frobenius_sq(&residual);
    Ok(sum_sin_sq.max(0.0).sqrt() / q as f64)
}

/// Recomputes `(‖J_k‖²/‖X_k‖², ‖A_k‖²/‖X_k‖²)` from the stored matrices.
pub fn variance_explained(truth: &SimTruth) -> Result<Vec<VarianceExplained>> {
    (0..truth.data.n_blocks())
        .map(|k| {
            let total = frobenius_sq(truth.data.block(k));
            if !(total > 0.0) {
                return Err(ProjiveError::InvalidData(format!(
                    "block {} has zero Frobenius norm",
                    k + 1
                )));
            }
            Ok(VarianceExplained {
                joint: frobenius_sq(&truth.joint_matrices[k]) / total,
                indiv: frobenius_sq(&truth.indiv_matrices[k]) / total,
            })
        })
        .collect()
}

/// Score and loading matrices from either a fit or a simulation truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub joint_scores: DMatrix<f64>,
    pub indiv_scores: Vec<DMatrix<f64>>,
    pub joint_loadings: Vec<DMatrix<f64>>,
    pub indiv_loadings: Vec<DMatrix<f64>>,
}

impl Components {
    /// Posterior mean scores and fitted loadings.
    pub fn from_fit(result: &FitResult) -> Self {
        let layout = result.params.layout();
        let groups = crate::em::extract_scores(result, &layout);
        Self {
            joint_scores: groups.joint,
            indiv_scores: groups.individual,
            joint_loadings: result.params.w_joint().to_vec(),
            indiv_loadings: result.params.w_indiv().to_vec(),
        }
    }

    pub fn from_truth(truth: &SimTruth) -> Self {
        Self {
            joint_scores: truth.joint_scores.clone(),
            indiv_scores: truth.indiv_scores.clone(),
            joint_loadings: truth.joint_loadings.clone(),
            indiv_loadings: truth.indiv_loadings.clone(),
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.joint_loadings.len()
    }
}

/// Scaled chordal norms between estimated and true subspaces. An entry is
/// `None` when either side has numerical rank 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub joint_score_dist: Option<f64>,
    pub joint_load_dist: Vec<Option<f64>>,
    pub indiv_score_dist: Vec<Option<f64>>,
    pub indiv_load_dist: Vec<Option<f64>>,
}

/// One `(metric, block, value)` row of a report; `block` is 0 for the joint
/// score metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub metric: String,
    pub block: usize,
    pub value: Option<f64>,
}

impl RecoveryReport {
    pub fn rows(&self) -> Vec<MetricValue> {
        let mut rows = vec![MetricValue {
            metric: "joint_scores".into(),
            block: 0,
            value: self.joint_score_dist,
        }];
        let groups = [
            ("joint_loadings", &self.joint_load_dist),
            ("indiv_scores", &self.indiv_score_dist),
            ("indiv_loadings", &self.indiv_load_dist),
        ];
        for (name, values) in groups {
            for (k, v) in values.iter().enumerate() {
                rows.push(MetricValue {
                    metric: name.into(),
                    block: k + 1,
                    value: *v,
                });
            }
        }
        rows
    }
}

fn applicable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Option<f64>> {
    if a.ncols() == 0 || b.ncols() == 0 {
        return Ok(None);
    }
    match chordal_norm(a, b) {
        Ok(v) => Ok(Some(v)),
        Err(ProjiveError::InvalidArgument(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn compare_components(estimate: &Components, truth: &Components) -> Result<RecoveryReport> {
    let k = truth.n_blocks();
    if estimate.n_blocks() != k {
        return Err(ProjiveError::Shape(format!(
            "estimate has {} blocks, truth has {k}",
            estimate.n_blocks()
        )));
    }
    let per_block = |est: &[DMatrix<f64>], tru: &[DMatrix<f64>]| -> Result<Vec<Option<f64>>> {
        est.iter().zip(tru).map(|(a, b)| applicable(a, b)).collect()
    };
    Ok(RecoveryReport {
        joint_score_dist: applicable(&estimate.joint_scores, &truth.joint_scores)?,
        joint_load_dist: per_block(&estimate.joint_loadings, &truth.joint_loadings)?,
        indiv_score_dist: per_block(&estimate.indiv_scores, &truth.indiv_scores)?,
        indiv_load_dist: per_block(&estimate.indiv_loadings, &truth.indiv_loadings)?,
    })
}

pub fn score_recovery(result: &FitResult, truth: &SimTruth) -> Result<RecoveryReport> {
    compare_components(&Components::from_fit(result), &Components::from_truth(truth))
}
