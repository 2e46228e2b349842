//! Helpers shared by the integration tests: random inputs and dense
//! reference computations that do not go through the library's low-rank
//! code paths.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use projive::{assemble_w, BlockRanks, MultiBlockData, NoiseModel, NoiseVariance, ProjiveParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

/// Joint loadings, individual loadings and noise diagonals per block.
pub type MStepReference = (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<DVector<f64>>);

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn random_params(dims: &[usize], ranks: &BlockRanks, model: NoiseModel, rng: &mut ChaCha8Rng) -> ProjiveParams {
    let mut wj = Vec::new();
    let mut wi = Vec::new();
    let mut noise = Vec::new();
    for (k, &p) in dims.iter().enumerate() {
        wj.push(randn(p, ranks.joint, rng));
        wi.push(randn(p, ranks.individual[k], rng));
        noise.push(match model {
            NoiseModel::Isotropic => NoiseVariance::Isotropic(rng.random_range(0.2..2.0)),
            NoiseModel::Diagonal => NoiseVariance::Diagonal(DVector::from_fn(p, |_, _| rng.random_range(0.2..2.0))),
        });
    }
    ProjiveParams::new(wj, wi, noise).unwrap()
}

pub fn random_data(dims: &[usize], n: usize, rng: &mut ChaCha8Rng) -> MultiBlockData {
    MultiBlockData::new(dims.iter().map(|&p| randn(p, n, rng)).collect()).unwrap()
}

/// Draws `n` subjects from the generative model, centred per feature.
pub fn sample_model(params: &ProjiveParams, n: usize, rng: &mut ChaCha8Rng) -> MultiBlockData {
    let layout = params.layout();
    let w = assemble_w(params, &layout).unwrap();
    let d = params.stacked_noise();
    let theta = randn(layout.r_total(), n, rng);
    let mut x = &w * theta;
    for i in 0..x.nrows() {
        for j in 0..n {
            x[(i, j)] += d[i].sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
    }
    for mut row in x.row_iter_mut() {
        let m = row.mean();
        row.add_scalar_mut(-m);
    }
    let blocks = (0..params.n_blocks())
        .map(|k| layout.select_block_rows(&x, k))
        .collect();
    MultiBlockData::new(blocks).unwrap()
}

/// Dense `C = W Wᵀ + D` built entry by entry from the block definitions.
pub fn dense_covariance(params: &ProjiveParams) -> DMatrix<f64> {
    let dims = params.dims();
    let p: usize = dims.iter().sum();
    let mut c = DMatrix::zeros(p, p);
    let mut r0 = 0;
    for a in 0..dims.len() {
        let mut c0 = 0;
        for b in 0..dims.len() {
            let mut blk = &params.w_joint()[a] * params.w_joint()[b].transpose();
            if a == b {
                blk += &params.w_indiv()[a] * params.w_indiv()[a].transpose();
                let d = params.noise()[a].diagonal(dims[a]);
                for i in 0..dims[a] {
                    blk[(i, i)] += d[i];
                }
            }
            c.view_mut((r0, c0), (dims[a], dims[b])).copy_from(&blk);
            c0 += dims[b];
        }
        r0 += dims[a];
    }
    c
}

/// Sum of per-subject multivariate normal log densities, via a dense
/// Cholesky factor of `C`.
pub fn mvn_loglik(data: &MultiBlockData, params: &ProjiveParams) -> f64 {
    let c = dense_covariance(params);
    let chol = c.clone().cholesky().expect("C is positive definite");
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let x = data.stacked();
    let p = x.nrows() as f64;
    let mut total = 0.0;
    for col in x.column_iter() {
        let v = col.into_owned();
        let sol = chol.solve(&v);
        total += -0.5 * (p * (2.0 * PI).ln() + log_det + v.dot(&sol));
    }
    total
}

/// Conditional mean (`n × r`) and covariance of `θ` given `x` from the
/// joint Gaussian `[[I, Wᵀ], [W, C]]`, using an explicit inverse of `C`.
pub fn gaussian_conditional(data: &MultiBlockData, params: &ProjiveParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let layout = params.layout();
    let w = assemble_w(params, &layout).unwrap();
    let c_inv = dense_covariance(params).try_inverse().unwrap();
    let gain = w.transpose() * &c_inv;
    let mean = (&gain * data.stacked()).transpose();
    let cov = DMatrix::identity(layout.r_total(), layout.r_total()) - &gain * &w;
    (mean, cov)
}

/// One factor-analysis M-step per block from the given moments, written
/// with explicit inverses and the `diag(S − W E[θ]xᵀ/n)` noise form.
pub fn reference_m_step(
    data: &MultiBlockData,
    mean: &DMatrix<f64>,
    cov: &DMatrix<f64>,
    ranks: &BlockRanks,
    model: NoiseModel,
) -> MStepReference {
    let n = data.n_subjects() as f64;
    let r_j = ranks.joint;
    let mut offsets = vec![r_j];
    for r in &ranks.individual {
        offsets.push(offsets.last().unwrap() + r);
    }
    let mut wj = Vec::new();
    let mut wi = Vec::new();
    let mut dd = Vec::new();
    for (k, x) in data.blocks().iter().enumerate() {
        let idx: Vec<usize> = (0..r_j).chain(offsets[k]..offsets[k] + ranks.individual[k]).collect();
        let m = mean.select_columns(idx.iter());
        let c = DMatrix::from_fn(idx.len(), idx.len(), |a, b| cov[(idx[a], idx[b])]);
        let ett = &c * n + m.transpose() * &m;
        let cross = x * &m;
        let w = &cross * ett.try_inverse().unwrap();
        let s = x * x.transpose() / n;
        let resid = s - &w * cross.transpose() / n;
        let mut d = resid.diagonal();
        if model == NoiseModel::Isotropic {
            let avg = d.mean();
            d.fill(avg);
        }
        wj.push(w.columns(0, r_j).into_owned());
        wi.push(w.columns(r_j, ranks.individual[k]).into_owned());
        dd.push(d);
    }
    (wj, wi, dd)
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
