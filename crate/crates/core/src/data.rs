//! Core containers: multi-block observations, block ranks, model parameters
//! and the stacked layout that maps between per-block and stacked views.
//!
//! **Orientation.** Every block is stored as a `p_k × n` matrix: one row per
//! feature, one column per subject. Tabular files are usually
//! subjects × features; the CSV readers in [`crate::io`] transpose on ingest.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ProjiveError, Result};
use crate::linalg::{singular_values_desc, RANK_TOL};

/// Smallest admissible noise variance.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// `K ≥ 2` aligned feature blocks observed on the same `n` subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiBlockData {
    blocks: Vec<DMatrix<f64>>,
    subject_ids: Option<Vec<String>>,
    feature_names: Option<Vec<Vec<String>>>,
}

impl MultiBlockData {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        if blocks.len() < 2 {
            return Err(ProjiveError::InvalidData(format!(
                "need at least two blocks, got {}",
                blocks.len()
            )));
        }
        let n = blocks[0].ncols();
        for (k, b) in blocks.iter().enumerate() {
            if b.ncols() != n {
                return Err(ProjiveError::Shape(format!(
                    "block {} has {} subjects, block 1 has {}",
                    k + 1,
                    b.ncols(),
                    n
                )));
            }
            if b.nrows() == 0 {
                return Err(ProjiveError::InvalidData(format!("block {} has no features", k + 1)));
            }
            if let Some(pos) = b.iter().position(|v| !v.is_finite()) {
                return Err(ProjiveError::InvalidData(format!(
                    "block {} has a non-finite entry at feature {}, subject {}",
                    k + 1,
                    pos % b.nrows() + 1,
                    pos / b.nrows() + 1
                )));
            }
        }
        if n == 0 {
            return Err(ProjiveError::InvalidData("no subjects".into()));
        }
        Ok(Self {
            blocks,
            subject_ids: None,
            feature_names: None,
        })
    }

    pub fn with_subject_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n_subjects() {
            return Err(ProjiveError::Shape(format!(
                "{} subject ids for {} subjects",
                ids.len(),
                self.n_subjects()
            )));
        }
        self.subject_ids = Some(ids);
        Ok(self)
    }

    pub fn with_feature_names(mut self, names: Vec<Vec<String>>) -> Result<Self> {
        if names.len() != self.n_blocks() {
            return Err(ProjiveError::Shape(format!(
                "feature names given for {} blocks, data has {}",
                names.len(),
                self.n_blocks()
            )));
        }
        for (k, (nm, b)) in names.iter().zip(&self.blocks).enumerate() {
            if nm.len() != b.nrows() {
                return Err(ProjiveError::Shape(format!(
                    "block {} has {} features but {} names",
                    k + 1,
                    b.nrows(),
                    nm.len()
                )));
            }
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    /// Rebuild with new block matrices, keeping ids and feature names.
    pub(crate) fn replace_blocks(&self, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let mut out = Self::new(blocks)?;
        out.subject_ids = self.subject_ids.clone();
        out.feature_names = self.feature_names.clone();
        Ok(out)
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.blocks[0].ncols()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.nrows()).collect()
    }

    pub fn block(&self, k: usize) -> &DMatrix<f64> {
        &self.blocks[k]
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn subject_ids(&self) -> Option<&[String]> {
        self.subject_ids.as_deref()
    }

    pub fn feature_names(&self, k: usize) -> Option<&[String]> {
        self.feature_names.as_ref().map(|f| f[k].as_slice())
    }

    /// Name of feature `j` in block `k`, falling back to a positional label.
    pub fn feature_label(&self, k: usize, j: usize) -> String {
        self.feature_names(k)
            .map(|f| f[j].clone())
            .unwrap_or_else(|| format!("feature {}", j + 1))
    }

    /// Blocks stacked vertically: `p_total × n`, column `i` is `x_i`.
    pub fn stacked(&self) -> DMatrix<f64> {
        stack_rows(&self.blocks)
    }

    /// Largest absolute per-feature mean over all blocks.
    pub fn max_abs_feature_mean(&self) -> f64 {
        let n = self.n_subjects() as f64;
        self.blocks
            .iter()
            .flat_map(|b| b.row_iter().map(|r| (r.sum() / n).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn stack_rows(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks.first().map_or(0, |b| b.ncols());
    let p: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(p, n);
    let mut row = 0;
    for b in blocks {
        out.rows_mut(row, b.nrows()).copy_from(b);
        row += b.nrows();
    }
    out
}

/// Joint rank and per-block individual ranks.
///
/// Text form is `rJ:rI1,rI2,…`, e.g. `1:2,2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockRanks {
    pub joint: usize,
    pub individual: Vec<usize>,
}

impl BlockRanks {
    pub fn new(joint: usize, individual: Vec<usize>) -> Self {
        Self { joint, individual }
    }

    pub fn n_blocks(&self) -> usize {
        self.individual.len()
    }

    pub fn total(&self) -> usize {
        self.joint + self.individual.iter().sum::<usize>()
    }

    /// Checks `r_J + r_Ik < p_k` for every block.
    pub fn validate(&self, dims: &[usize]) -> Result<()> {
        if self.individual.len() != dims.len() {
            return Err(ProjiveError::InvalidRanks(format!(
                "{} individual ranks for {} blocks",
                self.individual.len(),
                dims.len()
            )));
        }
        for (k, (&ri, &p)) in self.individual.iter().zip(dims).enumerate() {
            if self.joint + ri >= p {
                return Err(ProjiveError::InvalidRanks(format!(
                    "block {}: r_J + r_I = {} must be < p = {}",
                    k + 1,
                    self.joint + ri,
                    p
                )));
            }
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus `r_J ≥ 1`, required for fitting.
    pub fn validate_for_fit(&self, dims: &[usize]) -> Result<()> {
        if self.joint == 0 {
            return Err(ProjiveError::InvalidRanks("joint rank must be at least 1".into()));
        }
        self.validate(dims)
    }
}

impl fmt::Display for BlockRanks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let indiv: Vec<String> = self.individual.iter().map(|r| r.to_string()).collect();
        write!(f, "{}:{}", self.joint, indiv.join(","))
    }
}

impl FromStr for BlockRanks {
    type Err = ProjiveError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || ProjiveError::InvalidRanks(format!("expected rJ:rI1,rI2,…, got {s:?}"));
        let (j, rest) = s.trim().split_once(':').ok_or_else(bad)?;
        let joint = j.trim().parse().map_err(|_| bad())?;
        let individual = rest
            .split(',')
            .map(|v| v.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { joint, individual })
    }
}

impl Serialize for BlockRanks {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BlockRanks {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    Isotropic,
    Diagonal,
}

impl FromStr for NoiseModel {
    type Err = ProjiveError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "isotropic" => Ok(Self::Isotropic),
            "diagonal" => Ok(Self::Diagonal),
            other => Err(ProjiveError::InvalidArgument(format!(
                "unknown noise model {other:?} (expected isotropic or diagonal)"
            ))),
        }
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Isotropic => "isotropic",
            Self::Diagonal => "diagonal",
        })
    }
}

/// Per-block error covariance `D_k`.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseVariance {
    Isotropic(f64),
    Diagonal(DVector<f64>),
}

impl NoiseVariance {
    /// Diagonal of `D_k` for a block with `p` features.
    pub fn diagonal(&self, p: usize) -> DVector<f64> {
        match self {
            Self::Isotropic(s2) => DVector::from_element(p, *s2),
            Self::Diagonal(d) => d.clone(),
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            Self::Isotropic(s2) => *s2,
            Self::Diagonal(d) => d.min(),
        }
    }

    pub fn model(&self) -> NoiseModel {
        match self {
            Self::Isotropic(_) => NoiseModel::Isotropic,
            Self::Diagonal(_) => NoiseModel::Diagonal,
        }
    }

    /// Converts to the requested noise model; diagonal to isotropic uses the
    /// mean variance.
    pub fn as_model(&self, model: NoiseModel, p: usize) -> Self {
        match (self, model) {
            (Self::Isotropic(s2), NoiseModel::Diagonal) => Self::Diagonal(DVector::from_element(p, *s2)),
            (Self::Diagonal(d), NoiseModel::Isotropic) => Self::Isotropic(d.mean()),
            _ => self.clone(),
        }
    }
}

/// Loadings and noise variances `{W_Jk, W_Ik, D_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjiveParams {
    pub(crate) w_joint: Vec<DMatrix<f64>>,
    pub(crate) w_indiv: Vec<DMatrix<f64>>,
    pub(crate) noise: Vec<NoiseVariance>,
}

impl ProjiveParams {
    /// Validates shapes and that every noise variance is finite and at or
    /// above [`VARIANCE_FLOOR`]. Joint loadings may be rank deficient here;
    /// see [`check_joint_full_rank`](Self::check_joint_full_rank).
    pub fn new(w_joint: Vec<DMatrix<f64>>, w_indiv: Vec<DMatrix<f64>>, noise: Vec<NoiseVariance>) -> Result<Self> {
        let k = w_joint.len();
        if w_indiv.len() != k || noise.len() != k {
            return Err(ProjiveError::Shape(format!(
                "{} joint, {} individual and {} noise entries",
                k,
                w_indiv.len(),
                noise.len()
            )));
        }
        if k == 0 {
            return Err(ProjiveError::Shape("no blocks".into()));
        }
        let r_j = w_joint[0].ncols();
        for b in 0..k {
            let p = w_joint[b].nrows();
            if w_joint[b].ncols() != r_j {
                return Err(ProjiveError::Shape(format!(
                    "block {} joint loadings have {} columns, expected {}",
                    b + 1,
                    w_joint[b].ncols(),
                    r_j
                )));
            }
            if w_indiv[b].nrows() != p {
                return Err(ProjiveError::Shape(format!(
                    "block {}: joint loadings have {} rows, individual {}",
                    b + 1,
                    p,
                    w_indiv[b].nrows()
                )));
            }
            if let NoiseVariance::Diagonal(d) = &noise[b] {
                if d.len() != p {
                    return Err(ProjiveError::Shape(format!(
                        "block {}: {} noise variances for {} features",
                        b + 1,
                        d.len(),
                        p
                    )));
                }
            }
            let ok = match &noise[b] {
                NoiseVariance::Isotropic(s2) => s2.is_finite() && *s2 >= VARIANCE_FLOOR,
                NoiseVariance::Diagonal(d) => d.iter().all(|v| v.is_finite() && *v >= VARIANCE_FLOOR),
            };
            if !ok {
                return Err(ProjiveError::InvalidParams(format!(
                    "block {}: noise variances must be finite and >= {VARIANCE_FLOOR:e}",
                    b + 1
                )));
            }
            if w_joint[b].iter().chain(w_indiv[b].iter()).any(|v| !v.is_finite()) {
                return Err(ProjiveError::InvalidParams(format!(
                    "block {}: non-finite loading",
                    b + 1
                )));
            }
        }
        Ok(Self {
            w_joint,
            w_indiv,
            noise,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.w_joint.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.w_joint.iter().map(|w| w.nrows()).collect()
    }

    pub fn ranks(&self) -> BlockRanks {
        BlockRanks {
            joint: self.w_joint[0].ncols(),
            individual: self.w_indiv.iter().map(|w| w.ncols()).collect(),
        }
    }

    pub fn layout(&self) -> StackedLayout {
        StackedLayout::new(&self.dims(), &self.ranks()).expect("params are shape-consistent")
    }

    pub fn w_joint(&self) -> &[DMatrix<f64>] {
        &self.w_joint
    }

    pub fn w_indiv(&self) -> &[DMatrix<f64>] {
        &self.w_indiv
    }

    pub fn noise(&self) -> &[NoiseVariance] {
        &self.noise
    }

    /// Noise model of the parameter set; mixed sets report `Diagonal`.
    pub fn noise_model(&self) -> NoiseModel {
        if self.noise.iter().all(|d| matches!(d, NoiseVariance::Isotropic(_))) {
            NoiseModel::Isotropic
        } else {
            NoiseModel::Diagonal
        }
    }

    /// `W_k = [W_Jk | W_Ik]`.
    pub fn block_loadings(&self, k: usize) -> DMatrix<f64> {
        let wj = &self.w_joint[k];
        let wi = &self.w_indiv[k];
        let mut out = DMatrix::zeros(wj.nrows(), wj.ncols() + wi.ncols());
        out.columns_mut(0, wj.ncols()).copy_from(wj);
        out.columns_mut(wj.ncols(), wi.ncols()).copy_from(wi);
        out
    }

    /// Diagonal of the stacked `D`.
    pub fn stacked_noise(&self) -> DVector<f64> {
        let parts: Vec<DVector<f64>> = self
            .noise
            .iter()
            .zip(&self.w_joint)
            .map(|(d, w)| d.diagonal(w.nrows()))
            .collect();
        let total: usize = parts.iter().map(|p| p.len()).sum();
        DVector::from_iterator(total, parts.iter().flat_map(|p| p.iter().copied()))
    }

    /// Errors unless every `W_Jk` has full column rank: smallest singular
    /// value above `1e-10` times the largest.
    pub fn check_joint_full_rank(&self) -> Result<()> {
        for (k, w) in self.w_joint.iter().enumerate() {
            let sv = singular_values_desc(w);
            let max = sv.first().copied().unwrap_or(0.0);
            let min = sv.last().copied().unwrap_or(0.0);
            if sv.len() < w.ncols() || max <= 0.0 || min <= RANK_TOL * max {
                return Err(ProjiveError::InvalidParams(format!(
                    "joint loadings of block {} are not of full column rank",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    /// Number of free parameters counted for AIC/BIC: every loading entry
    /// plus one variance per block (isotropic) or per feature (diagonal).
    /// Rotational indeterminacy is not subtracted.
    pub fn n_free_parameters(&self) -> usize {
        let loadings: usize = self
            .w_joint
            .iter()
            .zip(&self.w_indiv)
            .map(|(j, i)| j.nrows() * (j.ncols() + i.ncols()))
            .sum();
        let noise: usize = self
            .noise
            .iter()
            .zip(&self.w_joint)
            .map(|(d, w)| match d {
                NoiseVariance::Isotropic(_) => 1,
                NoiseVariance::Diagonal(_) => w.nrows(),
            })
            .sum();
        loadings + noise
    }
}

/// Offsets tying per-block quantities to the stacked feature vector `x_i`
/// (the `L_k` selectors) and to the latent vector `θ_i = (z_i, b_i1, …, b_iK)`
/// (the `M_k` selectors).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackedLayout {
    dims: Vec<usize>,
    ranks: BlockRanks,
    p_total: usize,
    r_total: usize,
    block_row_offsets: Vec<usize>,
    score_col_offsets: Vec<usize>,
}

impl StackedLayout {
    pub fn new(dims: &[usize], ranks: &BlockRanks) -> Result<Self> {
        if dims.len() != ranks.n_blocks() {
            return Err(ProjiveError::Shape(format!(
                "{} blocks but {} individual ranks",
                dims.len(),
                ranks.n_blocks()
            )));
        }
        let mut block_row_offsets = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for &p in dims {
            block_row_offsets.push(acc);
            acc += p;
        }
        let p_total = acc;
        // joint group first, then b_1 … b_K
        let mut score_col_offsets = vec![0];
        let mut acc = ranks.joint;
        for &r in &ranks.individual {
            score_col_offsets.push(acc);
            acc += r;
        }
        Ok(Self {
            dims: dims.to_vec(),
            ranks: ranks.clone(),
            p_total,
            r_total: acc,
            block_row_offsets,
            score_col_offsets,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ranks(&self) -> &BlockRanks {
        &self.ranks
    }

    pub fn p_total(&self) -> usize {
        self.p_total
    }

    pub fn r_total(&self) -> usize {
        self.r_total
    }

    pub fn block_row_offsets(&self) -> &[usize] {
        &self.block_row_offsets
    }

    /// Start column of the joint group (always 0) followed by the start of
    /// each individual group.
    pub fn score_col_offsets(&self) -> &[usize] {
        &self.score_col_offsets
    }

    pub fn block_rows(&self, k: usize) -> Range<usize> {
        let start = self.block_row_offsets[k];
        start..start + self.dims[k]
    }

    pub fn joint_cols(&self) -> Range<usize> {
        0..self.ranks.joint
    }

    pub fn indiv_cols(&self, k: usize) -> Range<usize> {
        let start = self.score_col_offsets[k + 1];
        start..start + self.ranks.individual[k]
    }

    /// Latent coordinates selected by `M_k`: joint columns then block `k`'s
    /// individual columns.
    pub fn block_score_cols(&self, k: usize) -> Vec<usize> {
        self.joint_cols().chain(self.indiv_cols(k)).collect()
    }

    /// `L_k` applied to a stacked matrix whose rows are features.
    pub fn select_block_rows(&self, stacked: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        stacked.rows(self.block_row_offsets[k], self.dims[k]).into_owned()
    }

    /// `M_k` applied along the latent dimension of a matrix whose columns
    /// index `θ` (e.g. the `n × r` posterior mean).
    pub fn select_score_cols(&self, m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        m.select_columns(self.block_score_cols(k).iter())
    }

    /// `M_k A M_kᵀ` for an `r × r` matrix `A`.
    pub fn select_score_block(&self, a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let idx = self.block_score_cols(k);
        DMatrix::from_fn(idx.len(), idx.len(), |i, j| a[(idx[i], idx[j])])
    }

    fn check_params(&self, params: &ProjiveParams) -> Result<()> {
        if params.dims() != self.dims || params.ranks() != self.ranks {
            return Err(ProjiveError::Shape(format!(
                "parameters have dims {:?} and ranks {}, layout expects {:?} and {}",
                params.dims(),
                params.ranks(),
                self.dims,
                self.ranks
            )));
        }
        Ok(())
    }
}

/// Block-structured loading matrix `W` (`p_total × r_total`): block `k`'s
/// rows hold `W_Jk` in the joint columns and `W_Ik` in block `k`'s
/// individual columns, zeros elsewhere.
pub fn assemble_w(params: &ProjiveParams, layout: &StackedLayout) -> Result<DMatrix<f64>> {
    layout.check_params(params)?;
    let mut w = DMatrix::zeros(layout.p_total, layout.r_total);
    for k in 0..layout.n_blocks() {
        let row = layout.block_row_offsets[k];
        let p = layout.dims[k];
        w.view_mut((row, 0), (p, layout.ranks.joint))
            .copy_from(&params.w_joint[k]);
        let ic = layout.score_col_offsets[k + 1];
        w.view_mut((row, ic), (p, layout.ranks.individual[k]))
            .copy_from(&params.w_indiv[k]);
    }
    Ok(w)
}

/// `C = W Wᵀ + D`, the marginal covariance of the stacked feature vector.
pub fn model_covariance(params: &ProjiveParams) -> DMatrix<f64> {
    let layout = params.layout();
    let w = assemble_w(params, &layout).expect("layout derived from params");
    let mut c = &w * w.transpose();
    for (i, d) in params.stacked_noise().iter().enumerate() {
        c[(i, i)] += d;
    }
    c
}
