use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{BlockRanks, MultiBlockData, NoiseModel, NoiseVariance, ProjiveParams, VARIANCE_FLOOR};
use crate::error::{ProjiveError, Result};
use crate::linalg::{psd_cholesky, sym_eigen_desc, symmetrize};

use super::InitStrategy;

/// Starting values for EM.
///
/// Noise variances always start at the rank-`(r_J + r_Ik)` pPCA estimate of
/// each block: the mean of the `p_k − r_J − r_Ik` smallest eigenvalues of
/// `S_k = X_k X_kᵀ / n`. Loadings depend on the strategy.
pub fn initialize(
    data: &MultiBlockData,
    ranks: &BlockRanks,
    strategy: &InitStrategy,
    noise_model: NoiseModel,
) -> Result<ProjiveParams> {
    let dims = data.dims();
    ranks.validate_for_fit(&dims)?;

    if let InitStrategy::Provided(params) = strategy {
        if params.dims() != dims || &params.ranks() != ranks {
            return Err(ProjiveError::Shape(format!(
                "provided parameters have dims {:?} and ranks {}, expected {:?} and {}",
                params.dims(),
                params.ranks(),
                dims,
                ranks
            )));
        }
        let noise = params
            .noise()
            .iter()
            .zip(&dims)
            .map(|(d, &p)| d.as_model(noise_model, p))
            .collect();
        return ProjiveParams::new(params.w_joint().to_vec(), params.w_indiv().to_vec(), noise);
    }

    let n = data.n_subjects();
    let max_indiv = ranks.individual.iter().copied().max().unwrap_or(0);
    if matches!(strategy, InitStrategy::Cholesky) && n <= ranks.joint + max_indiv {
        return Err(ProjiveError::InvalidRanks(format!(
            "Cholesky initialisation needs n > r_J + max r_I ({} <= {})",
            n,
            ranks.joint + max_indiv
        )));
    }

    let mut rng = match strategy {
        InitStrategy::RandomNormal(seed) => Some(ChaCha8Rng::seed_from_u64(*seed)),
        _ => None,
    };

    let mut w_joint = Vec::with_capacity(dims.len());
    let mut w_indiv = Vec::with_capacity(dims.len());
    let mut noise = Vec::with_capacity(dims.len());
    for (k, x) in data.blocks().iter().enumerate() {
        let p = x.nrows();
        let r_i = ranks.individual[k];
        let cov = symmetrize(&(x * x.transpose() / n as f64));
        let (eig, _) = sym_eigen_desc(&cov);
        let n_trailing = p - ranks.joint - r_i;
        let s2 = eig.iter().skip(p - n_trailing).sum::<f64>() / n_trailing as f64;
        let s2 = if s2 < VARIANCE_FLOOR {
            log::warn!(
                "initial noise variance of block {} clamped to {VARIANCE_FLOOR:e}",
                k + 1
            );
            VARIANCE_FLOOR
        } else {
            s2
        };

        let (wj, wi) = match rng.as_mut() {
            Some(rng) => (gaussian(p, ranks.joint, rng), gaussian(p, r_i, rng)),
            None => {
                let l = psd_cholesky(&cov).ok_or(ProjiveError::NotPositiveSemidefinite { block: k + 1 })?;
                (
                    l.columns(0, ranks.joint).into_owned(),
                    l.columns(ranks.joint, r_i).into_owned(),
                )
            }
        };
        w_joint.push(wj);
        w_indiv.push(wi);
        noise.push(match noise_model {
            NoiseModel::Isotropic => NoiseVariance::Isotropic(s2),
            NoiseModel::Diagonal => NoiseVariance::Diagonal(nalgebra::DVector::from_element(p, s2)),
        });
    }
    ProjiveParams::new(w_joint, w_indiv, noise)
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // column-major fill order is part of the reproducibility contract
    DMatrix::from_iterator(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)),
    )
}
