//! Probabilistic joint and individual variation explained.
//!
//! A multi-block Gaussian latent factor model: each block `k` of features
//! observed on the same subjects is written as
//! `x_ik = W_Jk z_i + W_Ik b_ik + ε_ik`, with joint scores `z_i` shared by
//! all blocks and individual scores `b_ik` specific to one block. Parameters
//! are estimated by a closed-form EM algorithm.
//!
//! Blocks are stored features × subjects (`p_k × n`).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod em;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod preprocess;
pub mod rank_select;
pub mod rng;
pub mod sim;

pub use data::{
    assemble_w, model_covariance, BlockRanks, MultiBlockData, NoiseModel, NoiseVariance, ProjiveParams, StackedLayout,
    VARIANCE_FLOOR,
};
pub use em::{
    e_step, extract_scores, fit, initialize, log_likelihood, m_step, FitOptions, FitResult, InitKind, InitStrategy,
    PosteriorScores, ScoreGroups, TerminationReason,
};
pub use error::{ProjiveError, Result};
