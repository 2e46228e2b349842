use nalgebra::{Cholesky, DMatrix, DVector};

use crate::data::{MultiBlockData, NoiseModel, NoiseVariance, ProjiveParams, StackedLayout, VARIANCE_FLOOR};
use crate::error::{ProjiveError, Result};
use crate::linalg::sym_eigen_desc;

use super::PosteriorScores;

const SINGULAR_MOMENT_RATIO: f64 = 1e-12;

/// Closed-form maximisation step.
///
/// For each block, with `θ_ik = M_k θ_i`:
///
/// ```text
/// W̃_k = (Σ_i x_ik E[θ_ik]ᵀ) (Σ_i E[θ_ik θ_ikᵀ])⁻¹
/// D̃_k = Diag{ (1/n) Σ_i diag(x_ik x_ikᵀ + W̃_k E[θ_ik θ_ikᵀ] W̃_kᵀ − 2 W̃_k E[θ_ik] x_ikᵀ) }
/// ```
///
/// and the isotropic variance is the average of that diagonal. Variances
/// are clamped at [`VARIANCE_FLOOR`].
pub fn m_step(
    data: &MultiBlockData,
    scores: &PosteriorScores,
    layout: &StackedLayout,
    noise_model: NoiseModel,
) -> Result<ProjiveParams> {
    let n = data.n_subjects();
    if data.dims() != layout.dims() {
        return Err(ProjiveError::Shape(format!(
            "data dims {:?} differ from layout dims {:?}",
            data.dims(),
            layout.dims()
        )));
    }
    if scores.mean.nrows() != n || scores.mean.ncols() != layout.r_total() {
        return Err(ProjiveError::Shape(format!(
            "posterior mean is {}×{}, expected {}×{}",
            scores.mean.nrows(),
            scores.mean.ncols(),
            n,
            layout.r_total()
        )));
    }
    let r_j = layout.ranks().joint;
    let mut w_joint = Vec::with_capacity(layout.n_blocks());
    let mut w_indiv = Vec::with_capacity(layout.n_blocks());
    let mut noise = Vec::with_capacity(layout.n_blocks());

    for k in 0..layout.n_blocks() {
        let x = data.block(k);
        let p = x.nrows();
        let mean_k = layout.select_score_cols(&scores.mean, k);
        let second_k = layout.select_score_block(&scores.second_moment_sum, k);
        let r_k = second_k.nrows();
        let cross = x * &mean_k;

        let w_k = if r_k == 0 {
            DMatrix::zeros(p, 0)
        } else {
            let (eig, _) = sym_eigen_desc(&second_k);
            let (max, min) = (eig[0], eig[r_k - 1]);
            let ratio = if max > 0.0 { min / max } else { 0.0 };
            if !(ratio > SINGULAR_MOMENT_RATIO) {
                return Err(ProjiveError::SingularScoreMoment { block: k + 1, ratio });
            }
            let chol =
                Cholesky::new(second_k.clone()).ok_or(ProjiveError::SingularScoreMoment { block: k + 1, ratio })?;
            chol.solve(&cross.transpose()).transpose()
        };

        let wb = &w_k * &second_k;
        let diag = DVector::from_fn(p, |j, _| {
            let xx = x.row(j).norm_squared();
            let wbw = wb.row(j).dot(&w_k.row(j));
            let wa = w_k.row(j).dot(&cross.row(j));
            (xx + wbw - 2.0 * wa) / n as f64
        });

        let variance = match noise_model {
            NoiseModel::Isotropic => NoiseVariance::Isotropic(clamp_variance(diag.mean(), k)),
            NoiseModel::Diagonal => NoiseVariance::Diagonal(diag.map(|v| clamp_variance(v, k))),
        };

        w_joint.push(w_k.columns(0, r_j).into_owned());
        w_indiv.push(w_k.columns(r_j, r_k - r_j).into_owned());
        noise.push(variance);
    }
    ProjiveParams::new(w_joint, w_indiv, noise)
}

fn clamp_variance(v: f64, block: usize) -> f64 {
    if v < VARIANCE_FLOOR || v.is_nan() {
        log::warn!(
            "noise variance {v:e} in block {} clamped to {VARIANCE_FLOOR:e}",
            block + 1
        );
        VARIANCE_FLOOR
    } else {
        v
    }
}
