//! Run configuration: a TOML file whose values can be overridden by flags.
//!
//! ```toml
//! seed = 7
//! out = "runs/fit"
//!
//! [fit]
//! blocks = ["mri.csv", "csf.csv"]
//! ranks = "1:2,2"
//! noise = "isotropic"
//! init = "cholesky"
//!
//! [simulate]
//! replicates = 20
//! p2 = [20, 200]
//! ```
//!
//! Unknown keys are rejected. Relative paths are resolved against the
//! working directory.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{BlockRanks, NoiseModel};
use crate::em::{FitOptions, InitKind};
use crate::rank_select::{DEFAULT_ALPHA, DEFAULT_N_PERM};
use crate::sim::Setting;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub fit: FitConfig,
    pub simulate: SimulateConfig,
    pub evaluate: EvaluateConfig,
    pub select_rank: SelectRankConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// One subjects × features CSV per block.
    pub blocks: Vec<PathBuf>,
    /// Fit every replicate of a simulation run instead of `blocks`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim_dir: Option<PathBuf>,
    /// Required with `blocks`; defaults to the true ranks with `sim_dir`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranks: Option<BlockRanks>,
    pub noise: NoiseModel,
    pub init: InitKind,
    pub tol: f64,
    pub max_iters: usize,
    /// Subjects × covariates CSV; each feature is residualized on it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariates: Option<PathBuf>,
    pub center: bool,
    pub scale: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        let o = FitOptions::default();
        Self {
            blocks: Vec::new(),
            sim_dir: None,
            ranks: None,
            noise: o.noise_model,
            init: InitKind::Cholesky,
            tol: o.tol,
            max_iters: o.max_iters,
            covariates: None,
            center: false,
            scale: false,
        }
    }
}

impl FitConfig {
    pub fn options(&self) -> FitOptions {
        FitOptions {
            noise_model: self.noise,
            tol: self.tol,
            max_iters: self.max_iters,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Factorial,
    Feng,
}

/// A grid of factorial cells (the cartesian product of the list-valued
/// fields) or the Feng design, each replicated `replicates` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub design: DesignKind,
    pub replicates: usize,
    pub n: usize,
    pub p1: usize,
    pub p2: Vec<usize>,
    pub r_j: Vec<usize>,
    pub r_i: Vec<usize>,
    pub r2_joint1: Vec<f64>,
    pub r2_joint2: Vec<f64>,
    pub r2_indiv: f64,
    pub settings: Vec<Setting>,
    pub feng: FengConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            design: DesignKind::Factorial,
            replicates: 1,
            n: 1000,
            p1: 20,
            p2: vec![20, 200],
            r_j: vec![1, 3],
            r_i: vec![2, 2],
            r2_joint1: vec![0.1, 0.5],
            r2_joint2: vec![0.1, 0.5],
            r2_indiv: 0.25,
            settings: vec![Setting::Gaussian, Setting::MixtureRademacher],
            feng: FengConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FengConfig {
    pub n: usize,
    pub p1: usize,
    pub p2: usize,
    pub noise_sd: f64,
}

impl Default for FengConfig {
    fn default() -> Self {
        Self {
            n: 100,
            p1: 100,
            p2: 1000,
            noise_sd: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim_dir: Option<PathBuf>,
    /// Output of `fit` over `sim_dir`. Pointing it at `sim_dir` itself
    /// compares the truth with itself.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    Permutation,
    Ic,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectRankConfig {
    pub blocks: Vec<PathBuf>,
    pub mode: SelectMode,
    /// PCA ranks of the two blocks for the permutation test.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_ranks: Option<[usize; 2]>,
    pub n_perm: usize,
    pub alpha: f64,
    /// Candidate ranks for the information-criterion grid.
    pub candidates: Vec<BlockRanks>,
}

impl Default for SelectRankConfig {
    fn default() -> Self {
        Self {
            blocks: Vec::new(),
            mode: SelectMode::Permutation,
            total_ranks: None,
            n_perm: DEFAULT_N_PERM,
            alpha: DEFAULT_ALPHA,
            candidates: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| anyhow::anyhow!("invalid config: {}", e.message().trim()))?;
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("invalid config: `{path}`: {}", e.into_inner().message().trim())
        })
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("{}: cannot read config", path.display()))?;
        Self::from_toml(&text).with_context(|| path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// SHA-256 of the effective configuration in canonical TOML form.
    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
