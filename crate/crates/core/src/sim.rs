//! Synthetic multi-block data with known joint and individual structure.
//!
//! The factorial design draws `X_k = d_k J_k + c_k A_k + E_k` with
//! `J_k = W_Jk Zᵀ`, `A_k = W_Ik B_kᵀ` and standard Gaussian noise, then
//! solves for the scale constants `(d_k, c_k)` that hit the requested
//! proportions of variance explained. Score matrices and noise rows are
//! centred before scaling, so every generated block has zero feature means.
//!
//! Random draws happen in a fixed order from one seeded generator: joint
//! scores, then per block joint loadings, individual loadings, individual
//! scores and noise.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::MultiBlockData;
use crate::error::{ProjiveError, Result};
use crate::io;
use crate::linalg::{frobenius_sq, trace_abt};
use crate::rng::seeded;

pub const MIXTURE_WEIGHTS: [f64; 3] = [0.2, 0.5, 0.3];
pub const MIXTURE_MEANS: [f64; 3] = [-4.0, 0.0, 4.0];
pub const MIXTURE_SDS: [f64; 3] = [1.0, 1.0, 1.0];

/// Distribution of the joint subject scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDist {
    Gaussian,
    /// Three-component mixture with weights (0.2, 0.5, 0.3), means
    /// (−4, 0, 4) and unit standard deviations.
    MixtureGaussian,
}

/// Distribution of loading entries before the diagonal scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadingDist {
    Gaussian,
    Rademacher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n: usize,
    pub p: Vec<usize>,
    pub r_j: usize,
    pub r_i: Vec<usize>,
    pub target_r2_joint: Vec<f64>,
    pub target_r2_indiv: Vec<f64>,
    pub score_dist: ScoreDist,
    pub loading_dist: LoadingDist,
    /// Diagonal of `Q_J`; the first `r_j` entries are used.
    pub q_joint: Vec<f64>,
    /// Diagonal of `Q_I`; the first `r_Ik` entries are used.
    pub q_indiv: Vec<f64>,
    pub seed: u64,
}

/// The two data-generating settings of the factorial study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Gaussian scores and loadings.
    Gaussian,
    /// Mixture-of-Gaussians joint scores and Rademacher loadings.
    MixtureRademacher,
}

impl Setting {
    pub fn dists(self) -> (ScoreDist, LoadingDist) {
        match self {
            Self::Gaussian => (ScoreDist::Gaussian, LoadingDist::Gaussian),
            Self::MixtureRademacher => (ScoreDist::MixtureGaussian, LoadingDist::Rademacher),
        }
    }
}

/// Short label for a pair of score and loading distributions.
pub fn setting_label(score: ScoreDist, loading: LoadingDist) -> &'static str {
    match (score, loading) {
        (ScoreDist::Gaussian, LoadingDist::Gaussian) => "gaussian",
        (ScoreDist::MixtureGaussian, LoadingDist::Rademacher) => "mixture_rademacher",
        (ScoreDist::Gaussian, LoadingDist::Rademacher) => "gaussian_rademacher",
        (ScoreDist::MixtureGaussian, LoadingDist::Gaussian) => "mixture_gaussian",
    }
}

impl SimScenario {
    /// One cell of the factorial design: `n = 1000`, `p_1 = 20`,
    /// `r_I = (2, 2)` and individual `R² = 0.25` in both blocks.
    pub fn factorial(r_j: usize, p2: usize, r2_joint: (f64, f64), setting: Setting, seed: u64) -> Self {
        let (score_dist, loading_dist) = setting.dists();
        Self {
            n: 1000,
            p: vec![20, p2],
            r_j,
            r_i: vec![2, 2],
            target_r2_joint: vec![r2_joint.0, r2_joint.1],
            target_r2_indiv: vec![0.25, 0.25],
            score_dist,
            loading_dist,
            q_joint: vec![3.0, 2.0, 1.0],
            q_indiv: vec![2.0, 1.0],
            seed,
        }
    }

    /// All 2⁵ cells: `r_J ∈ {1,3}`, `p_2 ∈ {20,200}`, `R²_J1, R²_J2 ∈
    /// {0.1,0.5}` and both data-generating settings.
    pub fn factorial_cells(seed: u64) -> Vec<Self> {
        let mut cells = Vec::with_capacity(32);
        for setting in [Setting::Gaussian, Setting::MixtureRademacher] {
            for r_j in [1, 3] {
                for p2 in [20, 200] {
                    for r1 in [0.1, 0.5] {
                        for r2 in [0.1, 0.5] {
                            cells.push(Self::factorial(r_j, p2, (r1, r2), setting, seed));
                        }
                    }
                }
            }
        }
        cells
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.p.len();
        let bad = |m: String| Err(ProjiveError::InvalidScenario(m));
        if k < 2 {
            return bad(format!("need at least two blocks, got {k}"));
        }
        if self.r_i.len() != k || self.target_r2_joint.len() != k || self.target_r2_indiv.len() != k {
            return bad("p, r_i, target_r2_joint and target_r2_indiv must have one entry per block".into());
        }
        if self.n < 2 {
            return bad("n must be at least 2".into());
        }
        if self.r_j > self.q_joint.len() {
            return bad(format!(
                "r_j = {} exceeds the {} joint scales given",
                self.r_j,
                self.q_joint.len()
            ));
        }
        for b in 0..k {
            let (tj, ti) = (self.target_r2_joint[b], self.target_r2_indiv[b]);
            if self.r_i[b] > self.q_indiv.len() {
                return bad(format!(
                    "block {}: r_i exceeds the {} individual scales given",
                    b + 1,
                    self.q_indiv.len()
                ));
            }
            if self.p[b] == 0 {
                return bad(format!("block {} has no features", b + 1));
            }
            let check = |t: f64, rank: usize, what: &str| -> Result<()> {
                let ok = if rank == 0 { t == 0.0 } else { t > 0.0 && t < 1.0 };
                if ok {
                    Ok(())
                } else {
                    Err(ProjiveError::InvalidScenario(format!(
                        "block {}: {what} target {t} must lie in (0,1), or be 0 when the rank is 0",
                        b + 1
                    )))
                }
            };
            check(tj, self.r_j, "joint R²")?;
            check(ti, self.r_i[b], "individual R²")?;
            if tj + ti >= 1.0 {
                return bad(format!(
                    "block {}: joint + individual R² = {} must be < 1",
                    b + 1,
                    tj + ti
                ));
            }
        }
        Ok(())
    }
}

/// Scale constants of one block: `X_k = joint·J_k + indiv·A_k + E_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleConstants {
    /// `d_k`
    pub joint: f64,
    /// `c_k`
    pub indiv: f64,
}

/// Achieved proportions of variance explained in one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceExplained {
    pub joint: f64,
    pub indiv: f64,
}

/// How a [`SimTruth`] was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum SimDesign {
    Factorial(SimScenario),
    Feng {
        n: usize,
        p1: usize,
        p2: usize,
        noise_sd: f64,
        seed: u64,
    },
}

impl SimDesign {
    pub fn seed(&self) -> u64 {
        match self {
            Self::Factorial(s) => s.seed,
            Self::Feng { seed, .. } => *seed,
        }
    }
}

/// Generated data together with every component used to build it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub design: SimDesign,
    pub data: MultiBlockData,
    /// `n × r_J`
    pub joint_scores: DMatrix<f64>,
    /// `n × r_Ik` per block.
    pub indiv_scores: Vec<DMatrix<f64>>,
    /// Scaled joint loadings `d_k W_Jk`.
    pub joint_loadings: Vec<DMatrix<f64>>,
    /// Scaled individual loadings `c_k W_Ik`.
    pub indiv_loadings: Vec<DMatrix<f64>>,
    /// `d_k J_k`, `p_k × n`.
    pub joint_matrices: Vec<DMatrix<f64>>,
    /// `c_k A_k`, `p_k × n`.
    pub indiv_matrices: Vec<DMatrix<f64>>,
    /// `E_k`, `p_k × n`.
    pub noise: Vec<DMatrix<f64>>,
    pub achieved_r2: Vec<VarianceExplained>,
    pub scale_constants: Vec<ScaleConstants>,
}

/// Frobenius inner products that determine both variance ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceTerms {
    pub jj: f64,
    pub aa: f64,
    pub ee: f64,
    pub je: f64,
    pub ae: f64,
    pub ja: f64,
}

impl TraceTerms {
    pub fn new(j: &DMatrix<f64>, a: &DMatrix<f64>, e: &DMatrix<f64>) -> Self {
        Self {
            jj: frobenius_sq(j),
            aa: frobenius_sq(a),
            ee: frobenius_sq(e),
            je: trace_abt(j, e),
            ae: trace_abt(a, e),
            ja: trace_abt(j, a),
        }
    }

    /// `‖dJ + cA + E‖²_F`
    pub fn total(&self, d: f64, c: f64) -> f64 {
        d * d * self.jj + c * c * self.aa + self.ee + 2.0 * d * self.je + 2.0 * c * self.ae + 2.0 * d * c * self.ja
    }

    /// `(‖dJ‖²/‖X‖², ‖cA‖²/‖X‖²)`
    pub fn ratios(&self, d: f64, c: f64) -> (f64, f64) {
        let t = self.total(d, c);
        (d * d * self.jj / t, c * c * self.aa / t)
    }
}

const MAX_SWEEPS: usize = 200;
const SWEEP_TOL: f64 = 1e-10;
const ACCEPT_TOL: f64 = 1e-8;

/// Solves for positive `(d, c)` with `‖dJ‖²/‖X‖² = t_J` and
/// `‖cA‖²/‖X‖² = t_I` where `X = dJ + cA + E`.
///
/// The denominator is expanded with every cross term, `2d tr(JEᵀ)`,
/// `2c tr(AEᵀ)` and `2dc tr(JAᵀ)`. The two equations are solved by
/// alternating one-dimensional bisections (each ratio goes from 0 to 1 as
/// its own constant grows), up to 200 sweeps.
pub fn solve_scale_constants(
    j: &DMatrix<f64>,
    a: &DMatrix<f64>,
    e: &DMatrix<f64>,
    target_r2_j: f64,
    target_r2_i: f64,
) -> Result<ScaleConstants> {
    if j.shape() != a.shape() || j.shape() != e.shape() {
        return Err(ProjiveError::Shape("J, A and E must have the same shape".into()));
    }
    let terms = TraceTerms::new(j, a, e);
    if !(terms.jj > 0.0 && terms.aa > 0.0 && terms.ee > 0.0) {
        return Err(ProjiveError::Solver(
            "J, A and E must all have positive Frobenius norm".into(),
        ));
    }
    let in_unit = |t: f64| t > 0.0 && t < 1.0;
    if !in_unit(target_r2_j) || !in_unit(target_r2_i) || target_r2_j + target_r2_i >= 1.0 {
        return Err(ProjiveError::Solver(format!(
            "targets ({target_r2_j}, {target_r2_i}) must lie in (0,1) with sum < 1"
        )));
    }
    solve_terms(&terms, target_r2_j, target_r2_i)
}

/// Solver on precomputed traces. A zero target pins that constant at 0.
fn solve_terms(terms: &TraceTerms, t_j: f64, t_i: f64) -> Result<ScaleConstants> {
    let fail = |why: &str| {
        ProjiveError::Solver(format!(
            "{why}; traces: tr(JJ')={:e} tr(AA')={:e} tr(EE')={:e} tr(JE')={:e} tr(AE')={:e} tr(JA')={:e}",
            terms.jj, terms.aa, terms.ee, terms.je, terms.ae, terms.ja
        ))
    };
    let solve_j = t_j > 0.0;
    let solve_i = t_i > 0.0;
    // starting point: closed form when all cross traces vanish
    let slack = 1.0 - t_j - t_i;
    let mut d = if solve_j {
        (t_j * terms.ee / (terms.jj * slack)).sqrt()
    } else {
        0.0
    };
    let mut c = if solve_i {
        (t_i * terms.ee / (terms.aa * slack)).sqrt()
    } else {
        0.0
    };

    let residuals = |d: f64, c: f64| {
        let (rj, ri) = terms.ratios(d, c);
        ((rj - t_j).abs(), (ri - t_i).abs())
    };
    for _ in 0..MAX_SWEEPS {
        if solve_j {
            d = bisect(|x| terms.ratios(x, c).0, t_j, d).ok_or_else(|| fail("no bracket for d"))?;
        }
        if solve_i {
            c = bisect(|x| terms.ratios(d, x).1, t_i, c).ok_or_else(|| fail("no bracket for c"))?;
        }
        let (ej, ei) = residuals(d, c);
        if ej < SWEEP_TOL && ei < SWEEP_TOL {
            break;
        }
    }
    let (ej, ei) = residuals(d, c);
    if !(ej < ACCEPT_TOL && ei < ACCEPT_TOL) || (solve_j && !(d > 0.0)) || (solve_i && !(c > 0.0)) {
        return Err(fail(&format!(
            "did not converge (residuals {ej:e}, {ei:e}, d = {d}, c = {c})"
        )));
    }
    Ok(ScaleConstants { joint: d, indiv: c })
}

/// Root of `f(x) = target` on `x > 0`, given `f(0) = 0 < target` and
/// `f(x) → 1 > target`. Brackets by doubling from `guess`.
fn bisect(f: impl Fn(f64) -> f64, target: f64, guess: f64) -> Option<f64> {
    let g = |x: f64| f(x) - target;
    let mut lo = 0.0;
    let mut hi = if guess > 0.0 && guess.is_finite() { guess } else { 1.0 };
    let mut tries = 0;
    while !(g(hi) > 0.0) {
        let v = g(hi);
        if v.is_nan() || tries > 2000 {
            return None;
        }
        lo = hi;
        hi *= 2.0;
        tries += 1;
    }
    // shrink from below as well so the bracket is as tight as possible
    let mut probe = hi * 0.5;
    while probe > lo && g(probe) > 0.0 {
        hi = probe;
        probe *= 0.5;
    }
    if probe > lo {
        lo = probe;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = g(mid);
        if v.is_nan() {
            return None;
        }
        if v > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // the endpoint with the smaller residual
    Some(if g(lo).abs() < g(hi).abs() { lo } else { hi })
}

/// Draws `n × r` joint scores from the requested distribution.
pub fn draw_joint_scores(dist: ScoreDist, n: usize, r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    match dist {
        ScoreDist::Gaussian => gaussian(n, r, rng),
        ScoreDist::MixtureGaussian => DMatrix::from_iterator(
            n,
            r,
            (0..n * r).map(|_| {
                let u: f64 = rng.random();
                let comp = if u < MIXTURE_WEIGHTS[0] {
                    0
                } else if u < MIXTURE_WEIGHTS[0] + MIXTURE_WEIGHTS[1] {
                    1
                } else {
                    2
                };
                let z: f64 = rng.sample(StandardNormal);
                MIXTURE_MEANS[comp] + MIXTURE_SDS[comp] * z
            }),
        ),
    }
}

pub fn draw_loadings(dist: LoadingDist, p: usize, r: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    match dist {
        LoadingDist::Gaussian => gaussian(p, r, rng),
        LoadingDist::Rademacher => {
            DMatrix::from_iterator(p, r, (0..p * r).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }))
        }
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_iterator(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)),
    )
}

fn center_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
}

fn center_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
}

fn scale_columns(m: &DMatrix<f64>, scales: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= scales[j];
    }
    out
}

fn ratio_pair(joint: &DMatrix<f64>, indiv: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<VarianceExplained> {
    let total = frobenius_sq(x);
    if !(total > 0.0) {
        return Err(ProjiveError::InvalidData("data block has zero Frobenius norm".into()));
    }
    Ok(VarianceExplained {
        joint: frobenius_sq(joint) / total,
        indiv: frobenius_sq(indiv) / total,
    })
}

/// Draws one dataset from the factorial design.
pub fn generate(scenario: &SimScenario) -> Result<SimTruth> {
    scenario.validate()?;
    let mut rng = seeded(scenario.seed);
    let n = scenario.n;
    let mut z = draw_joint_scores(scenario.score_dist, n, scenario.r_j, &mut rng);
    center_columns(&mut z);

    let k = scenario.p.len();
    let mut truth = SimTruth {
        design: SimDesign::Factorial(scenario.clone()),
        data: MultiBlockData::new(vec![DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)])?,
        joint_scores: z.clone(),
        indiv_scores: Vec::with_capacity(k),
        joint_loadings: Vec::with_capacity(k),
        indiv_loadings: Vec::with_capacity(k),
        joint_matrices: Vec::with_capacity(k),
        indiv_matrices: Vec::with_capacity(k),
        noise: Vec::with_capacity(k),
        achieved_r2: Vec::with_capacity(k),
        scale_constants: Vec::with_capacity(k),
    };
    let mut blocks = Vec::with_capacity(k);
    for b in 0..k {
        let p = scenario.p[b];
        let r_i = scenario.r_i[b];
        let w_j = scale_columns(
            &draw_loadings(scenario.loading_dist, p, scenario.r_j, &mut rng),
            &scenario.q_joint,
        );
        let w_i = scale_columns(
            &draw_loadings(scenario.loading_dist, p, r_i, &mut rng),
            &scenario.q_indiv,
        );
        let mut scores_i = gaussian(n, r_i, &mut rng);
        center_columns(&mut scores_i);
        let mut e = gaussian(p, n, &mut rng);
        center_rows(&mut e);

        let j_mat = &w_j * z.transpose();
        let a_mat = &w_i * scores_i.transpose();
        let terms = TraceTerms::new(&j_mat, &a_mat, &e);
        let sc =
            solve_terms(&terms, scenario.target_r2_joint[b], scenario.target_r2_indiv[b]).map_err(|err| match err {
                ProjiveError::Solver(m) => ProjiveError::Solver(format!("block {}: {m}", b + 1)),
                other => other,
            })?;

        let joint = j_mat * sc.joint;
        let indiv = a_mat * sc.indiv;
        let x = &joint + &indiv + &e;
        truth.achieved_r2.push(ratio_pair(&joint, &indiv, &x)?);
        truth.scale_constants.push(sc);
        truth.joint_loadings.push(w_j * sc.joint);
        truth.indiv_loadings.push(w_i * sc.indiv);
        truth.indiv_scores.push(scores_i);
        truth.joint_matrices.push(joint);
        truth.indiv_matrices.push(indiv);
        truth.noise.push(e);
        blocks.push(x);
    }
    truth.data = MultiBlockData::new(blocks)?;
    Ok(truth)
}

/// `±1` alternating, with a trailing 0 when `len` is odd so the entries sum
/// to exactly zero.
fn alternating(len: usize) -> impl Iterator<Item = f64> {
    (0..len).map(move |i| {
        if len % 2 == 1 && i == len - 1 {
            0.0
        } else if i % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    })
}

/// Two-block design with a single sign-valued joint component.
///
/// * joint scores are −1 for the first half of subjects and +1 for the rest;
/// * block 1 joint loadings are 0 on the first half of features, 1 on the
///   rest; block 2 joint loadings are 0 on the first 80% and 1 on the rest;
/// * block 1 has one individual component whose scores split subjects by
///   index parity (±1) and whose loading is 1 on the zero-joint half and
///   alternating ±1 on the other half;
/// * block 2 has two individual components with standard Gaussian scores;
///   their loadings are (1 on the zero-joint part, alternating ±1 on the
///   rest) and (+1 then −1 on the zero-joint part, 0 on the rest);
/// * noise is Gaussian with standard deviation `noise_sd`.
///
/// All individual loadings are exactly orthogonal to the joint loadings of
/// their block. Gaussian scores and noise rows are centred.
pub fn generate_feng(n: usize, p1: usize, p2: usize, noise_sd: f64, seed: u64) -> Result<SimTruth> {
    if !n.is_multiple_of(2) || n == 0 {
        return Err(ProjiveError::InvalidScenario(format!(
            "n must be even and positive, got {n}"
        )));
    }
    if p1 < 10 || p2 < 10 {
        return Err(ProjiveError::InvalidScenario(format!(
            "p1 and p2 must be at least 10, got {p1}, {p2}"
        )));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(ProjiveError::InvalidScenario(format!(
            "noise_sd must be non-negative, got {noise_sd}"
        )));
    }
    let mut rng = seeded(seed);
    let half = n / 2;
    let z = DMatrix::from_fn(n, 1, |i, _| if i < half { -1.0 } else { 1.0 });

    let zeros1 = p1 / 2;
    let w_j1 = DMatrix::from_fn(p1, 1, |j, _| if j < zeros1 { 0.0 } else { 1.0 });
    let w_i1 = DMatrix::from_iterator(p1, 1, std::iter::repeat_n(1.0, zeros1).chain(alternating(p1 - zeros1)));
    let s1 = DMatrix::from_fn(n, 1, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });

    let zeros2 = p2 * 4 / 5;
    let w_j2 = DMatrix::from_fn(p2, 1, |j, _| if j < zeros2 { 0.0 } else { 1.0 });
    let h = zeros2 / 2;
    let comp1: Vec<f64> = std::iter::repeat_n(1.0, zeros2)
        .chain(alternating(p2 - zeros2))
        .collect();
    let comp2: Vec<f64> = (0..p2)
        .map(|j| {
            if j < h {
                1.0
            } else if j < 2 * h {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    let w_i2 = DMatrix::from_iterator(p2, 2, comp1.into_iter().chain(comp2));
    let mut s2 = gaussian(n, 2, &mut rng);
    center_columns(&mut s2);

    let mut noise = Vec::with_capacity(2);
    for p in [p1, p2] {
        let mut e = gaussian(p, n, &mut rng) * noise_sd;
        center_rows(&mut e);
        noise.push(e);
    }

    let joint_matrices = vec![&w_j1 * z.transpose(), &w_j2 * z.transpose()];
    let indiv_matrices = vec![&w_i1 * s1.transpose(), &w_i2 * s2.transpose()];
    let blocks: Vec<DMatrix<f64>> = (0..2)
        .map(|b| &joint_matrices[b] + &indiv_matrices[b] + &noise[b])
        .collect();
    let achieved_r2 = (0..2)
        .map(|b| ratio_pair(&joint_matrices[b], &indiv_matrices[b], &blocks[b]))
        .collect::<Result<Vec<_>>>()?;

    Ok(SimTruth {
        design: SimDesign::Feng {
            n,
            p1,
            p2,
            noise_sd,
            seed,
        },
        data: MultiBlockData::new(blocks)?,
        joint_scores: z,
        indiv_scores: vec![s1, s2],
        joint_loadings: vec![w_j1, w_j2],
        indiv_loadings: vec![w_i1, w_i2],
        joint_matrices,
        indiv_matrices,
        noise,
        achieved_r2,
        scale_constants: vec![ScaleConstants { joint: 1.0, indiv: 1.0 }; 2],
    })
}

/// Manifest written next to a serialized [`SimTruth`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimManifest {
    #[serde(flatten)]
    pub design: SimDesign,
    pub n_blocks: usize,
    pub achieved_r2: Vec<VarianceExplained>,
    pub scale_constants: Vec<ScaleConstants>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn block_file(k: usize) -> String {
    format!("block_{}.csv", k + 1)
}

impl SimTruth {
    pub fn manifest(&self) -> SimManifest {
        SimManifest {
            design: self.design.clone(),
            n_blocks: self.data.n_blocks(),
            achieved_r2: self.achieved_r2.clone(),
            scale_constants: self.scale_constants.clone(),
        }
    }

    /// Writes one CSV per block (subjects × features), one CSV per truth
    /// component and `manifest.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let ids = subject_ids(self.data.n_subjects());
        for (k, x) in self.data.blocks().iter().enumerate() {
            let features = feature_ids(x.nrows());
            io::write_block_csv(&dir.join(block_file(k)), x, &ids, &features)?;
            io::write_block_csv(
                &dir.join(format!("truth_joint_matrix_{}.csv", k + 1)),
                &self.joint_matrices[k],
                &ids,
                &features,
            )?;
            io::write_block_csv(
                &dir.join(format!("truth_indiv_matrix_{}.csv", k + 1)),
                &self.indiv_matrices[k],
                &ids,
                &features,
            )?;
            io::write_block_csv(
                &dir.join(format!("truth_noise_{}.csv", k + 1)),
                &self.noise[k],
                &ids,
                &features,
            )?;
            io::write_scores_csv(
                &dir.join(format!("truth_indiv_scores_{}.csv", k + 1)),
                &self.indiv_scores[k],
                &ids,
                "indiv",
            )?;
            io::write_loadings_csv(
                &dir.join(format!("truth_joint_loadings_{}.csv", k + 1)),
                &self.joint_loadings[k],
                &features,
                "joint",
            )?;
            io::write_loadings_csv(
                &dir.join(format!("truth_indiv_loadings_{}.csv", k + 1)),
                &self.indiv_loadings[k],
                &features,
                "indiv",
            )?;
        }
        io::write_scores_csv(&dir.join("truth_joint_scores.csv"), &self.joint_scores, &ids, "joint")?;
        io::write_json(&dir.join(MANIFEST_FILE), &self.manifest())
    }

    /// Reads a directory written by [`write_dir`](Self::write_dir).
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest: SimManifest = io::read_json(&dir.join(MANIFEST_FILE))?;
        let k = manifest.n_blocks;
        let read_block = |name: String| io::read_block_csv(&dir.join(name)).map(|b| b.values);
        let mut blocks = Vec::with_capacity(k);
        let mut truth = SimTruth {
            design: manifest.design.clone(),
            data: MultiBlockData::new(vec![DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)])?,
            joint_scores: io::read_labeled_csv(&dir.join("truth_joint_scores.csv"))?.values,
            indiv_scores: Vec::new(),
            joint_loadings: Vec::new(),
            indiv_loadings: Vec::new(),
            joint_matrices: Vec::new(),
            indiv_matrices: Vec::new(),
            noise: Vec::new(),
            achieved_r2: manifest.achieved_r2.clone(),
            scale_constants: manifest.scale_constants.clone(),
        };
        for b in 0..k {
            blocks.push(read_block(block_file(b))?);
            truth
                .joint_matrices
                .push(read_block(format!("truth_joint_matrix_{}.csv", b + 1))?);
            truth
                .indiv_matrices
                .push(read_block(format!("truth_indiv_matrix_{}.csv", b + 1))?);
            truth.noise.push(read_block(format!("truth_noise_{}.csv", b + 1))?);
            truth
                .indiv_scores
                .push(io::read_labeled_csv(&dir.join(format!("truth_indiv_scores_{}.csv", b + 1)))?.values);
            truth
                .joint_loadings
                .push(io::read_labeled_csv(&dir.join(format!("truth_joint_loadings_{}.csv", b + 1)))?.values);
            truth
                .indiv_loadings
                .push(io::read_labeled_csv(&dir.join(format!("truth_indiv_loadings_{}.csv", b + 1)))?.values);
        }
        truth.data = MultiBlockData::new(blocks)?;
        Ok(truth)
    }
}

pub(crate) fn subject_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("s{i}")).collect()
}

pub(crate) fn feature_ids(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("f{j}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::numerical_rank;
    use rand::SeedableRng;

    #[test]
    fn orthogonal_case_matches_closed_form() {
        // J, A, E with disjoint supports are mutually trace-orthogonal
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut j = DMatrix::zeros(6, 5);
        let mut a = DMatrix::zeros(6, 5);
        let mut e = DMatrix::zeros(6, 5);
        for c in 0..5 {
            j[(0, c)] = rng.sample::<f64, _>(StandardNormal);
            j[(1, c)] = rng.sample::<f64, _>(StandardNormal);
            a[(2, c)] = rng.sample::<f64, _>(StandardNormal);
            e[(3, c)] = rng.sample::<f64, _>(StandardNormal);
            e[(4, c)] = rng.sample::<f64, _>(StandardNormal);
            e[(5, c)] = rng.sample::<f64, _>(StandardNormal);
        }
        let (tj, ti) = (0.5, 0.25);
        let sc = solve_scale_constants(&j, &a, &e, tj, ti).unwrap();
        let ee = frobenius_sq(&e);
        let d = (tj * ee / (frobenius_sq(&j) * (1.0 - tj - ti))).sqrt();
        let c = (ti * ee / (frobenius_sq(&a) * (1.0 - tj - ti))).sqrt();
        assert!((sc.joint - d).abs() < 1e-8 * d.max(1.0));
        assert!((sc.indiv - c).abs() < 1e-8 * c.max(1.0));
    }

    #[test]
    fn plug_back_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let j = gaussian(8, 30, &mut rng);
        let a = gaussian(8, 30, &mut rng);
        let e = gaussian(8, 30, &mut rng);
        for (tj, ti) in [(0.5, 0.25), (0.1, 0.25), (0.3, 0.6), (1e-3, 1e-3)] {
            let sc = solve_scale_constants(&j, &a, &e, tj, ti).unwrap();
            assert!(sc.joint > 0.0 && sc.indiv > 0.0);
            let x = &j * sc.joint + &a * sc.indiv + &e;
            let total = frobenius_sq(&x);
            assert!((frobenius_sq(&(&j * sc.joint)) / total - tj).abs() < 1e-8);
            assert!((frobenius_sq(&(&a * sc.indiv)) / total - ti).abs() < 1e-8);
        }
    }

    #[test]
    fn pathological_correlation_never_silently_wrong() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = gaussian(5, 12, &mut rng);
        let a = gaussian(5, 12, &mut rng);
        let j = e.clone();
        match solve_scale_constants(&j, &a, &e, 0.5, 0.25) {
            Ok(sc) => {
                let (rj, ri) = TraceTerms::new(&j, &a, &e).ratios(sc.joint, sc.indiv);
                assert!((rj - 0.5).abs() < 1e-8 && (ri - 0.25).abs() < 1e-8);
            }
            Err(err) => assert!(matches!(err, ProjiveError::Solver(_))),
        }
    }

    #[test]
    fn solver_rejects_bad_targets() {
        let m = DMatrix::from_element(2, 2, 1.0);
        assert!(solve_scale_constants(&m, &m, &m, 0.6, 0.5).is_err());
        assert!(solve_scale_constants(&m, &m, &DMatrix::zeros(2, 2), 0.5, 0.2).is_err());
    }

    #[test]
    fn factorial_cell_hits_targets() {
        let sc = SimScenario::factorial(1, 20, (0.5, 0.5), Setting::Gaussian, 1);
        let truth = generate(&sc).unwrap();
        for (k, r2) in truth.achieved_r2.iter().enumerate() {
            assert!((r2.joint - sc.target_r2_joint[k]).abs() < 1e-6);
            assert!((r2.indiv - sc.target_r2_indiv[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn reconstruction_and_determinism() {
        let mut sc = SimScenario::factorial(3, 20, (0.1, 0.5), Setting::MixtureRademacher, 4);
        sc.n = 200;
        let t1 = generate(&sc).unwrap();
        let t2 = generate(&sc).unwrap();
        assert_eq!(t1, t2);
        for k in 0..2 {
            let recon = &t1.joint_matrices[k] + &t1.indiv_matrices[k] + &t1.noise[k];
            assert!((recon - t1.data.block(k)).amax() <= 1e-12);
        }
        sc.seed = 5;
        assert_ne!(generate(&sc).unwrap().data, t1.data);
    }

    #[test]
    fn tiny_targets_are_reachable() {
        let mut sc = SimScenario::factorial(1, 20, (1e-3, 1e-3), Setting::Gaussian, 2);
        sc.target_r2_indiv = vec![1e-3, 1e-3];
        sc.n = 300;
        let t = generate(&sc).unwrap();
        for s in &t.scale_constants {
            assert!(s.joint > 0.0 && s.joint < 0.1);
            assert!(s.indiv > 0.0 && s.indiv < 0.1);
        }
        for k in 0..2 {
            let recon = &t.joint_matrices[k] + &t.indiv_matrices[k] + &t.noise[k];
            assert!((recon - t.data.block(k)).amax() <= 1e-12);
        }
    }

    #[test]
    fn zero_joint_rank_scenario() {
        let sc = SimScenario {
            n: 100,
            p: vec![10, 12],
            r_j: 0,
            r_i: vec![2, 2],
            target_r2_joint: vec![0.0, 0.0],
            target_r2_indiv: vec![0.4, 0.4],
            score_dist: ScoreDist::Gaussian,
            loading_dist: LoadingDist::Gaussian,
            q_joint: vec![3.0, 2.0, 1.0],
            q_indiv: vec![2.0, 1.0],
            seed: 3,
        };
        let t = generate(&sc).unwrap();
        assert_eq!(t.joint_scores.ncols(), 0);
        assert!((t.achieved_r2[0].indiv - 0.4).abs() < 1e-8);
    }

    #[test]
    fn directory_round_trip() {
        let mut s = SimScenario::factorial(2, 8, (0.3, 0.4), Setting::MixtureRademacher, 5);
        s.n = 30;
        s.p[0] = 6;
        let truth = generate(&s).unwrap();
        let dir = std::env::temp_dir().join(format!("projive_sim_rt_{}", std::process::id()));
        truth.write_dir(&dir).unwrap();
        let back = SimTruth::read_dir(&dir).unwrap();
        std::fs::remove_dir_all(&dir).unwrap();
        assert_eq!(back.design, truth.design);
        assert_eq!(back.data.blocks(), truth.data.blocks());
        assert_eq!(back.joint_scores, truth.joint_scores);
        assert_eq!(back.indiv_loadings, truth.indiv_loadings);
        assert_eq!(back.achieved_r2, truth.achieved_r2);
    }

    #[test]
    fn feng_structure() {
        let t = generate_feng(100, 100, 1000, 1.0, 1).unwrap();
        assert_eq!(t.data.block(0).shape(), (100, 100));
        assert_eq!(t.data.block(1).shape(), (1000, 100));
        assert_eq!(t.joint_loadings[0].iter().filter(|&&v| v == 0.0).count(), 50);
        assert_eq!(t.joint_loadings[1].iter().filter(|&&v| v == 0.0).count(), 800);
        for k in 0..2 {
            let dots = t.joint_loadings[k].transpose() * &t.indiv_loadings[k];
            assert!(dots.iter().all(|&v| v == 0.0));
        }
        assert!(generate_feng(99, 100, 1000, 1.0, 1).is_err());
    }

    #[test]
    fn feng_noiseless_rank() {
        let t = generate_feng(40, 20, 30, 0.0, 1).unwrap();
        assert_eq!(numerical_rank(t.data.block(0)), 2);
        assert_eq!(numerical_rank(t.data.block(1)), 3);
    }
}
