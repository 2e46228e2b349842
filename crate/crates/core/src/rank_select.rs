//! Rank selection helpers: a permutation test for the joint rank of two
//! blocks, information-criterion grids over candidate ranks and the
//! per-block eigenvalue spectrum for scree inspection.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BlockRanks, MultiBlockData};
use crate::em::{fit, FitOptions, InitKind};
use crate::error::{ProjiveError, Result};
use crate::rng::{derive_seed, seeded};

pub const DEFAULT_N_PERM: usize = 199;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermTestResult {
    pub selected_r_j: usize,
    /// Canonical correlations between the two blocks' PC scores, descending.
    pub observed_stats: Vec<f64>,
    /// Threshold applied to each component: the `(1 − α)` quantile of the
    /// permutation null of the largest canonical correlation.
    pub null_quantiles: Vec<f64>,
    pub n_permutations: usize,
    pub alpha: f64,
    pub seed: u64,
}

fn center_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let m = row.mean();
        row.add_scalar_mut(-m);
    }
    out
}

/// Orthonormal `n × r` basis of the leading `r` principal component scores
/// of a `p × n` block.
fn pc_score_basis(x: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let svd = center_rows(x).transpose().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    DMatrix::from_fn(u.nrows(), r, |i, c| u[(i, order[c])])
}

/// Canonical correlations between two orthonormal bases.
fn canonical_correlations(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = (q1.transpose() * q2)
        .singular_values()
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Order statistic `⌈(1 − α)(m + 1)⌉` (1-based, capped at `m`) of `values`.
fn upper_quantile(mut values: Vec<f64>, alpha: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len();
    let idx = ((1.0 - alpha) * (m + 1) as f64).ceil() as usize;
    values[idx.clamp(1, m) - 1]
}

/// Sequential permutation test for the joint rank of two blocks.
///
/// PC scores of each block are taken at the given total ranks. The observed
/// canonical correlations between the score sets are compared, component by
/// component, with the null distribution of the largest canonical
/// correlation obtained by permuting the subject order of the second
/// block's scores. Components are accepted from the first while the
/// observed value strictly exceeds the null quantile; testing stops at the
/// first failure.
pub fn permutation_joint_rank(
    data: &MultiBlockData,
    total_ranks: (usize, usize),
    n_perm: usize,
    alpha: f64,
    seed: u64,
) -> Result<PermTestResult> {
    if data.n_blocks() != 2 {
        return Err(ProjiveError::InvalidArgument(format!(
            "the permutation test compares exactly two blocks, got {}",
            data.n_blocks()
        )));
    }
    let n = data.n_subjects();
    if n < 4 {
        return Err(ProjiveError::InvalidArgument(format!(
            "need at least 4 subjects, got {n}"
        )));
    }
    if n_perm < 19 {
        return Err(ProjiveError::InvalidArgument(format!(
            "need at least 19 permutations, got {n_perm}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ProjiveError::InvalidArgument(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    let ranks = [total_ranks.0, total_ranks.1];
    for (k, &r) in ranks.iter().enumerate() {
        let p = data.block(k).nrows();
        if r == 0 || r >= p.min(n) {
            return Err(ProjiveError::InvalidRanks(format!(
                "block {} total rank {r} must lie in 1..{}",
                k + 1,
                p.min(n)
            )));
        }
    }
    let q1 = pc_score_basis(data.block(0), ranks[0]);
    let q2 = pc_score_basis(data.block(1), ranks[1]);
    let observed = canonical_correlations(&q1, &q2);
    let m = observed.len();

    let null: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeded(derive_seed(seed, &[i as u64]));
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            canonical_correlations(&q1, &q2.select_rows(&order))[0]
        })
        .collect();
    let null_quantiles = vec![upper_quantile(null, alpha); m];
    let selected_r_j = observed.iter().zip(&null_quantiles).take_while(|(o, q)| o > q).count();

    Ok(PermTestResult {
        selected_r_j,
        observed_stats: observed,
        null_quantiles,
        n_permutations: n_perm,
        alpha,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcEntry {
    pub ranks: BlockRanks,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub loglik: Option<f64>,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub n_parameters: Option<usize>,
    /// Set when the fit for this candidate failed.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcGrid {
    pub entries: Vec<IcEntry>,
}

impl IcGrid {
    fn best_by(&self, key: impl Fn(&IcEntry) -> Option<f64>) -> Option<&IcEntry> {
        self.entries
            .iter()
            .filter_map(|e| key(e).map(|v| (v, e)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, e)| e)
    }

    pub fn best_by_bic(&self) -> Option<&IcEntry> {
        self.best_by(|e| e.bic)
    }

    pub fn best_by_aic(&self) -> Option<&IcEntry> {
        self.best_by(|e| e.aic)
    }
}

/// Seed used for a candidate in [`ic_grid`]; depends on the ranks only, so
/// reordering the candidates does not change any entry.
pub fn candidate_seed(seed: u64, ranks: &BlockRanks) -> u64 {
    let mut path = Vec::with_capacity(ranks.individual.len() + 1);
    path.push(ranks.joint as u64);
    path.extend(ranks.individual.iter().map(|&r| r as u64));
    derive_seed(seed, &path)
}

/// Fits every candidate with the same options and records AIC, BIC and the
/// final log-likelihood. A failed fit is recorded in its entry.
pub fn ic_grid(
    data: &MultiBlockData,
    candidates: &[BlockRanks],
    options: &FitOptions,
    init: InitKind,
    seed: u64,
) -> Result<IcGrid> {
    if candidates.is_empty() {
        return Err(ProjiveError::InvalidArgument("no candidate ranks given".into()));
    }
    let entries = candidates
        .par_iter()
        .map(|ranks| {
            let strategy = init.strategy(candidate_seed(seed, ranks));
            match fit(data, ranks, &strategy, options) {
                Ok(res) => IcEntry {
                    ranks: ranks.clone(),
                    aic: Some(res.aic),
                    bic: Some(res.bic),
                    loglik: Some(res.loglik()),
                    converged: Some(res.converged),
                    iterations: Some(res.iterations),
                    n_parameters: Some(res.n_parameters),
                    error: None,
                },
                Err(e) => IcEntry {
                    ranks: ranks.clone(),
                    aic: None,
                    bic: None,
                    loglik: None,
                    converged: None,
                    iterations: None,
                    n_parameters: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(IcGrid { entries })
}

/// Per block, the `min(p_k, n − 1)` largest eigenvalues of the sample
/// covariance (divisor `n − 1`), descending.
pub fn eigen_spectrum(data: &MultiBlockData) -> Result<Vec<Vec<f64>>> {
    let n = data.n_subjects();
    if n < 2 {
        return Err(ProjiveError::InvalidData(format!("need at least 2 subjects, got {n}")));
    }
    Ok(data
        .blocks()
        .iter()
        .map(|x| {
            let keep = x.nrows().min(n - 1);
            let mut sv: Vec<f64> = center_rows(x)
                .singular_values()
                .iter()
                .map(|s| s * s / (n - 1) as f64)
                .collect();
            sv.sort_by(|a, b| b.total_cmp(a));
            sv.resize(keep, 0.0);
            sv
        })
        .collect())
}
