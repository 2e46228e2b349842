//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

/// Relative tolerance used for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and eigenvectors permuted to match.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Lower-triangular Cholesky factor of a positive semidefinite matrix.
///
/// Pivots that fall below `tol * max_diag` are treated as zero and the
/// corresponding column of the factor is left at zero. Returns `None` when a
/// pivot is clearly negative, i.e. the matrix is not PSD.
pub fn psd_cholesky(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let max_diag = (0..n).map(|i| m[(i, i)].abs()).fold(0.0_f64, f64::max);
    let tol = 1e-12 * max_diag.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -1e-8 * max_diag.max(f64::MIN_POSITIVE) {
            return None;
        }
        if d <= tol {
            continue;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    Some(l)
}

/// Singular values of `m` in descending order.
pub fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Orthonormal basis for the column space of `m`, truncated at the numerical
/// rank (singular values above `RANK_TOL` times the largest).
pub fn orthonormal_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let nrows = m.nrows();
    if m.ncols() == 0 || nrows == 0 {
        return DMatrix::zeros(nrows, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sv = &svd.singular_values;
    let max = sv.iter().copied().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return DMatrix::zeros(nrows, 0);
    }
    let keep: Vec<usize> = (0..sv.len()).filter(|&i| sv[i] > RANK_TOL * max).collect();
    DMatrix::from_fn(nrows, keep.len(), |r, c| u[(r, keep[c])])
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = singular_values_desc(m);
    match sv.first() {
        Some(&max) if max > 0.0 => sv.iter().filter(|&&s| s > RANK_TOL * max).count(),
        _ => 0,
    }
}

/// Columns `start..start+len` of `m` as an owned matrix.
pub fn columns(m: &DMatrix<f64>, start: usize, len: usize) -> DMatrix<f64> {
    m.columns(start, len).into_owned()
}

/// Haar-distributed random orthogonal matrix (QR of a Gaussian matrix with
/// the sign convention fixed by the diagonal of R).
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col.neg_mut();
        }
    }
    q
}

pub fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// `tr(A Bᵀ)` for equally shaped matrices.
pub fn trace_abt(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
