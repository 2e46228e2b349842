use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data::{assemble_w, model_covariance, MultiBlockData, ProjiveParams, StackedLayout};
use crate::error::{ProjiveError, Result};
use crate::linalg::sym_eigen_desc;

use super::PosteriorScores;

/// Minimum eigenvalue ratio of `C` below which it is treated as singular.
const SINGULAR_RATIO: f64 = 1e-12;

/// Low-rank factorisation of `C = W Wᵀ + D` through
/// `M = I_r + Wᵀ D⁻¹ W`:
///
/// * `C⁻¹ = D⁻¹ − D⁻¹ W M⁻¹ Wᵀ D⁻¹`
/// * `Wᵀ C⁻¹ = M⁻¹ Wᵀ D⁻¹` and `I_r − Wᵀ C⁻¹ W = M⁻¹`
/// * `log|C| = log|D| + log|M|`
pub(crate) struct LowRankPrecision {
    w: DMatrix<f64>,
    inv_d: DVector<f64>,
    chol_m: Cholesky<f64, Dyn>,
    log_det_c: f64,
}

impl LowRankPrecision {
    pub(crate) fn new(params: &ProjiveParams, layout: &StackedLayout) -> Result<Self> {
        let w = assemble_w(params, layout)?;
        let d = params.stacked_noise();
        check_conditioning(params, &w, &d)?;

        let inv_d = d.map(|v| 1.0 / v);
        let wd = scale_rows(&w, &inv_d);
        let mut m = w.transpose() * &wd;
        for i in 0..m.nrows() {
            m[(i, i)] += 1.0;
        }
        let chol_m = Cholesky::new(m).ok_or(ProjiveError::SingularCovariance { ratio: 0.0 })?;
        let log_det_m = 2.0 * chol_m.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_det_d: f64 = d.iter().map(|v| v.ln()).sum();
        Ok(Self {
            w,
            inv_d,
            chol_m,
            log_det_c: log_det_d + log_det_m,
        })
    }

    /// `Wᵀ D⁻¹ X` for a stacked `p × n` data matrix.
    fn project(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        scale_rows(&self.w, &self.inv_d).transpose() * x
    }

    /// Posterior moments and observed-data log-likelihood in one pass.
    pub(crate) fn evaluate(&self, x: &DMatrix<f64>) -> (PosteriorScores, f64) {
        let n = x.ncols();
        let p = x.nrows();
        let u = self.project(x);
        let v = self.chol_m.solve(&u);
        let mean = v.transpose();
        let cov = self.chol_m.inverse();
        let scores = PosteriorScores::new(mean, cov);

        // n·tr(C⁻¹S) = Σ_i x_iᵀ C⁻¹ x_i
        let mut quad = 0.0;
        for (j, row) in x.row_iter().enumerate() {
            quad += self.inv_d[j] * row.norm_squared();
        }
        quad -= u.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>();
        let ll = -0.5 * n as f64 * (p as f64 * (2.0 * PI).ln() + self.log_det_c) - 0.5 * quad;
        (scores, ll)
    }
}

fn scale_rows(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut row) in out.row_iter_mut().enumerate() {
        row *= s[j];
    }
    out
}

/// `λ_min(C) ≥ min D` and `λ_max(C) ≤ max D + ‖W‖₂²`; the dense spectrum is
/// only computed when that cheap bound cannot rule out singularity.
fn check_conditioning(params: &ProjiveParams, w: &DMatrix<f64>, d: &DVector<f64>) -> Result<()> {
    let d_min = d.min();
    let d_max = d.max();
    let w_norm_sq = if w.ncols() == 0 {
        0.0
    } else {
        sym_eigen_desc(&(w.transpose() * w)).0[0].max(0.0)
    };
    let bound = d_min / (d_max + w_norm_sq);
    if bound >= SINGULAR_RATIO {
        return Ok(());
    }
    let (eig, _) = sym_eigen_desc(&model_covariance(params));
    let ratio = eig[eig.len() - 1] / eig[0];
    if ratio < SINGULAR_RATIO {
        return Err(ProjiveError::SingularCovariance { ratio });
    }
    Ok(())
}

fn check_data(data: &MultiBlockData, params: &ProjiveParams) -> Result<()> {
    if data.dims() != params.dims() {
        return Err(ProjiveError::Shape(format!(
            "data block dims {:?} differ from parameter dims {:?}",
            data.dims(),
            params.dims()
        )));
    }
    Ok(())
}

/// Observed-data log-likelihood `−(n/2){log|2πC| + tr(C⁻¹S)}` with
/// `S = (1/n) Σ x_i x_iᵀ`.
pub fn log_likelihood(data: &MultiBlockData, params: &ProjiveParams) -> Result<f64> {
    check_data(data, params)?;
    let layout = params.layout();
    let prec = LowRankPrecision::new(params, &layout)?;
    Ok(prec.evaluate(&data.stacked()).1)
}

/// Conditional moments of `θ_i = (z_i, b_i1, …, b_iK)` given `x_i`:
/// mean `Wᵀ C⁻¹ x_i` and covariance `I_r − Wᵀ C⁻¹ W`.
pub fn e_step(data: &MultiBlockData, params: &ProjiveParams) -> Result<PosteriorScores> {
    check_data(data, params)?;
    let layout = params.layout();
    let prec = LowRankPrecision::new(params, &layout)?;
    Ok(prec.evaluate(&data.stacked()).0)
}
