//! Batch command-line front end.
//!
//! Every command reads an optional TOML config (see [`config`]), applies
//! flag overrides, writes its outputs under `--out` together with a
//! `manifest.json`, and returns a process exit code: 0 on success, 1 on
//! error, 2 when a fit stopped at the iteration limit.

pub mod config;
mod evaluate;
mod fit;
mod select;
mod simulate;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{BlockRanks, NoiseModel};
use crate::em::InitKind;
use crate::io;

pub use config::RunConfig;
pub use evaluate::cmd_evaluate;
pub use fit::{cmd_fit, read_fit_components, FitSummary};
pub use select::cmd_select_rank;
pub use simulate::{cmd_simulate, replicate_dirs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "projive",
    version,
    about = "Multi-block joint and individual latent factor models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model to block CSVs or to every replicate of a simulation run.
    Fit(FitArgs),
    /// Generate simulated datasets.
    Simulate(SimulateArgs),
    /// Score fitted components against simulation truth.
    Evaluate(EvaluateArgs),
    /// Permutation test for the joint rank and information-criterion grids.
    SelectRank(SelectArgs),
}

/// Flags shared by every command; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Ranks as `rJ:rI1,rI2,...`.
    #[arg(long)]
    pub ranks: Option<BlockRanks>,
    #[arg(long)]
    pub noise: Option<NoiseModel>,
    #[arg(long)]
    pub init: Option<InitKind>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Block CSV (repeat once per block, in order).
    #[arg(long = "block")]
    pub blocks: Vec<PathBuf>,
    #[arg(long)]
    pub sim_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub sim_dir: Option<PathBuf>,
    #[arg(long)]
    pub fit_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long = "block")]
    pub blocks: Vec<PathBuf>,
    #[arg(long)]
    pub n_perm: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

/// Loads the config file (if any) and applies the shared overrides.
pub(crate) fn resolve_config(common: &CommonArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.tol {
        cfg.fit.tol = t;
    }
    if let Some(m) = common.max_iters {
        cfg.fit.max_iters = m;
    }
    if let Some(r) = &common.ranks {
        cfg.fit.ranks = Some(r.clone());
    }
    if let Some(n) = common.noise {
        cfg.fit.noise = n;
    }
    if let Some(i) = common.init {
        cfg.fit.init = i;
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    Ok(cfg)
}

pub(crate) fn out_dir(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    cfg.out
        .clone()
        .ok_or_else(|| anyhow::anyhow!("no output directory: pass --out or set `out` in the config"))
}

/// Written to the root of every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: RunConfig,
    /// Per-item failures that did not stop the run.
    pub failures: Vec<String>,
}

pub(crate) fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, failures: Vec<String>) -> anyhow::Result<()> {
    let m = RunManifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        config_sha256: cfg.sha256(),
        config: cfg.clone(),
        failures,
    };
    io::write_json(&dir.join("manifest.json"), &m)?;
    Ok(())
}

/// Runs a parsed command and maps failures to exit code 1.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::SelectRank(a) => cmd_select_rank(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
