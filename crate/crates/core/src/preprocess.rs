//! Per-feature preprocessing: covariate residualization, centring and
//! unit-variance scaling.
//!
//! Sample variances use the `n − 1` divisor. The full pipeline residualizes
//! first and scales afterwards.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::MultiBlockData;
use crate::error::{ProjiveError, Result};
use crate::linalg::numerical_rank;

/// Everything needed to undo [`preprocess`] or [`center_and_scale`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    /// Removed mean of each feature, per block.
    pub means: Vec<DVector<f64>>,
    /// Divisor applied to each feature (1 when scaling is off), per block.
    pub scales: Vec<DVector<f64>>,
    /// Per block, `p_k × (q + 1)` regression coefficients on `[1 | covariates]`.
    pub covariate_coeffs: Option<Vec<DMatrix<f64>>>,
}

impl PreprocessReport {
    /// Maps processed data back to the original scale. `covariates` must be
    /// the matrix used for residualization, if any.
    pub fn inverse_transform(
        &self,
        data: &MultiBlockData,
        covariates: Option<&DMatrix<f64>>,
    ) -> Result<MultiBlockData> {
        if data.n_blocks() != self.means.len() {
            return Err(ProjiveError::Shape(format!(
                "report covers {} blocks, data has {}",
                self.means.len(),
                data.n_blocks()
            )));
        }
        let design = match (&self.covariate_coeffs, covariates) {
            (Some(_), Some(c)) => Some(design_matrix(c, data.n_subjects())?),
            (Some(_), None) => {
                return Err(ProjiveError::InvalidArgument(
                    "covariates are required to undo residualization".into(),
                ))
            }
            (None, _) => None,
        };
        let mut blocks = Vec::with_capacity(data.n_blocks());
        for (k, x) in data.blocks().iter().enumerate() {
            if x.nrows() != self.means[k].len() {
                return Err(ProjiveError::Shape(format!(
                    "block {} feature count differs from report",
                    k + 1
                )));
            }
            let mut out = x.clone();
            for (j, mut row) in out.row_iter_mut().enumerate() {
                row *= self.scales[k][j];
                row.add_scalar_mut(self.means[k][j]);
            }
            if let (Some(coeffs), Some(d)) = (&self.covariate_coeffs, &design) {
                out += &coeffs[k] * d.transpose();
            }
            blocks.push(out);
        }
        data.replace_blocks(blocks)
    }
}

/// Centres every feature and, if `scale`, divides it by its sample standard
/// deviation.
pub fn center_and_scale(data: &MultiBlockData, scale: bool) -> Result<(MultiBlockData, PreprocessReport)> {
    let n = data.n_subjects();
    if n < 2 {
        return Err(ProjiveError::InvalidData(format!("need at least 2 subjects, got {n}")));
    }
    let mut blocks = Vec::with_capacity(data.n_blocks());
    let mut means = Vec::with_capacity(data.n_blocks());
    let mut scales = Vec::with_capacity(data.n_blocks());
    for (k, x) in data.blocks().iter().enumerate() {
        let p = x.nrows();
        let mut out = x.clone();
        let mut mu = DVector::zeros(p);
        let mut sd = DVector::from_element(p, 1.0);
        for (j, mut row) in out.row_iter_mut().enumerate() {
            let m = row.mean();
            row.add_scalar_mut(-m);
            mu[j] = m;
            if scale {
                let s = (row.norm_squared() / (n - 1) as f64).sqrt();
                if !(s > 0.0) || s <= 1e-14 * m.abs() {
                    return Err(ProjiveError::ZeroVariance {
                        block: k + 1,
                        feature: data.feature_label(k, j),
                    });
                }
                row /= s;
                sd[j] = s;
            }
        }
        blocks.push(out);
        means.push(mu);
        scales.push(sd);
    }
    Ok((
        data.replace_blocks(blocks)?,
        PreprocessReport {
            means,
            scales,
            covariate_coeffs: None,
        },
    ))
}

fn design_matrix(covariates: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    if covariates.nrows() != n {
        return Err(ProjiveError::Shape(format!(
            "covariates have {} rows, data has {n} subjects",
            covariates.nrows()
        )));
    }
    let q = covariates.ncols();
    let mut d = DMatrix::from_element(n, q + 1, 1.0);
    d.columns_mut(1, q).copy_from(covariates);
    Ok(d)
}

/// Residuals and coefficients of each feature regressed on `[1 | covariates]`.
pub fn residualize_with_coeffs(
    data: &MultiBlockData,
    covariates: &DMatrix<f64>,
) -> Result<(MultiBlockData, Vec<DMatrix<f64>>)> {
    let n = data.n_subjects();
    let d = design_matrix(covariates, n)?;
    let cols = d.ncols();
    if cols >= n {
        return Err(ProjiveError::InvalidArgument(format!(
            "{} covariates plus intercept need more than {n} subjects",
            cols - 1
        )));
    }
    let rank = numerical_rank(&d);
    if rank < cols {
        return Err(ProjiveError::RankDeficientCovariates { rank, cols });
    }
    if !covariates.iter().all(|v| v.is_finite()) {
        return Err(ProjiveError::InvalidData("covariates contain non-finite values".into()));
    }
    let qr = d.qr();
    let q = qr.q();
    let r = qr.r();
    let mut blocks = Vec::with_capacity(data.n_blocks());
    let mut coeffs = Vec::with_capacity(data.n_blocks());
    for x in data.blocks() {
        // rows of X projected onto the design's column space
        let xq = x * &q;
        let fitted = &xq * q.transpose();
        let beta_t = r
            .solve_upper_triangular(&xq.transpose())
            .ok_or(ProjiveError::RankDeficientCovariates { rank, cols })?;
        blocks.push(x - fitted);
        coeffs.push(beta_t.transpose());
    }
    Ok((data.replace_blocks(blocks)?, coeffs))
}

/// Each feature replaced by its least-squares residual on an intercept plus
/// the `n × q` covariates.
pub fn residualize(data: &MultiBlockData, covariates: &DMatrix<f64>) -> Result<MultiBlockData> {
    residualize_with_coeffs(data, covariates).map(|(d, _)| d)
}

/// Residualize (when covariates are given), then centre and optionally
/// scale.
pub fn preprocess(
    data: &MultiBlockData,
    covariates: Option<&DMatrix<f64>>,
    scale: bool,
) -> Result<(MultiBlockData, PreprocessReport)> {
    match covariates {
        Some(c) => {
            let (resid, coeffs) = residualize_with_coeffs(data, c)?;
            let (out, mut report) = center_and_scale(&resid, scale)?;
            report.covariate_coeffs = Some(coeffs);
            Ok((out, report))
        }
        None => center_and_scale(data, scale),
    }
}
