use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BlockRanks, MultiBlockData, NoiseModel};
use crate::em::{extract_scores, fit, FitResult, InitKind, TerminationReason};
use crate::io;
use crate::metrics::Components;
use crate::preprocess::preprocess;
use crate::sim::{block_file, feature_ids, subject_ids, SimDesign, SimManifest, MANIFEST_FILE};

use super::config::FitConfig;
use super::simulate::{replicate_dirs, replicate_seed};
use super::{out_dir, resolve_config, write_manifest, FitArgs, EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n_blocks: usize,
    pub n_subjects: usize,
    pub ranks: BlockRanks,
    pub noise_model: NoiseModel,
    pub init: InitKind,
    pub seed: u64,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_parameters: usize,
    pub iterations: usize,
    pub converged: bool,
    pub termination: TerminationReason,
}

#[derive(Debug, Serialize)]
struct TraceRow {
    iteration: usize,
    loglik: f64,
}

#[derive(Debug, Serialize)]
struct FitRow {
    cell: usize,
    replicate: usize,
    loglik: Option<f64>,
    aic: Option<f64>,
    bic: Option<f64>,
    iterations: Option<usize>,
    converged: Option<bool>,
    error: Option<String>,
}

/// Writes loadings, noise variances, scores, the log-likelihood trace and a
/// JSON summary for one fit.
fn write_fit_outputs(
    dir: &Path,
    data: &MultiBlockData,
    res: &FitResult,
    init: InitKind,
    seed: u64,
) -> anyhow::Result<()> {
    let ids = data
        .subject_ids()
        .map(<[String]>::to_vec)
        .unwrap_or_else(|| subject_ids(data.n_subjects()));
    let params = &res.params;
    for k in 0..data.n_blocks() {
        let features = data
            .feature_names(k)
            .map(<[String]>::to_vec)
            .unwrap_or_else(|| feature_ids(data.block(k).nrows()));
        io::write_loadings_csv(
            &dir.join(format!("loadings_joint_{}.csv", k + 1)),
            &params.w_joint()[k],
            &features,
            "joint",
        )?;
        io::write_loadings_csv(
            &dir.join(format!("loadings_indiv_{}.csv", k + 1)),
            &params.w_indiv()[k],
            &features,
            "indiv",
        )?;
        let var = params.noise()[k].diagonal(features.len());
        let var = nalgebra::DMatrix::from_column_slice(var.len(), 1, var.as_slice());
        io::write_labeled_csv(
            &dir.join(format!("noise_{}.csv", k + 1)),
            "feature",
            &features,
            &["variance".into()],
            &var,
        )?;
    }
    let groups = extract_scores(res, &params.layout());
    io::write_scores_csv(&dir.join("scores_joint.csv"), &groups.joint, &ids, "joint")?;
    for (k, s) in groups.individual.iter().enumerate() {
        io::write_scores_csv(&dir.join(format!("scores_indiv_{}.csv", k + 1)), s, &ids, "indiv")?;
    }
    let trace: Vec<TraceRow> = res
        .loglik_trace
        .iter()
        .enumerate()
        .map(|(i, &l)| TraceRow {
            iteration: i + 1,
            loglik: l,
        })
        .collect();
    io::write_records(&dir.join("loglik_trace.csv"), &trace)?;
    let summary = FitSummary {
        n_blocks: data.n_blocks(),
        n_subjects: data.n_subjects(),
        ranks: params.ranks(),
        noise_model: params.noise_model(),
        init,
        seed,
        loglik: res.loglik(),
        aic: res.aic,
        bic: res.bic,
        n_parameters: res.n_parameters,
        iterations: res.iterations,
        converged: res.converged,
        termination: res.termination,
    };
    io::write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(())
}

/// Reads the scores and loadings written by `fit` from `dir`.
pub fn read_fit_components(dir: &Path) -> anyhow::Result<Components> {
    let summary: FitSummary = io::read_json(&dir.join(SUMMARY_FILE))?;
    let read = |name: String| io::read_labeled_csv(&dir.join(name)).map(|m| m.values);
    let k = summary.n_blocks;
    Ok(Components {
        joint_scores: read("scores_joint.csv".into())?,
        indiv_scores: (1..=k)
            .map(|b| read(format!("scores_indiv_{b}.csv")))
            .collect::<crate::Result<_>>()?,
        joint_loadings: (1..=k)
            .map(|b| read(format!("loadings_joint_{b}.csv")))
            .collect::<crate::Result<_>>()?,
        indiv_loadings: (1..=k)
            .map(|b| read(format!("loadings_indiv_{b}.csv")))
            .collect::<crate::Result<_>>()?,
    })
}

fn true_ranks(design: &SimDesign) -> BlockRanks {
    match design {
        SimDesign::Factorial(s) => BlockRanks::new(s.r_j, s.r_i.clone()),
        SimDesign::Feng { .. } => BlockRanks::new(1, vec![1, 2]),
    }
}

fn run_one(
    data: &MultiBlockData,
    ranks: &BlockRanks,
    cfg: &FitConfig,
    seed: u64,
    dir: &Path,
) -> anyhow::Result<FitResult> {
    let res = fit(data, ranks, &cfg.init.strategy(seed), &cfg.options())?;
    write_fit_outputs(dir, data, &res, cfg.init, seed)?;
    Ok(res)
}

fn exit_code(results: &[Option<bool>]) -> i32 {
    if results.iter().any(Option::is_none) {
        EXIT_ERROR
    } else if results.contains(&Some(false)) {
        EXIT_NOT_CONVERGED
    } else {
        EXIT_OK
    }
}

pub fn cmd_fit(args: &FitArgs) -> anyhow::Result<i32> {
    let mut cfg = resolve_config(&args.common)?;
    if !args.blocks.is_empty() {
        cfg.fit.blocks = args.blocks.clone();
    }
    if let Some(d) = &args.sim_dir {
        cfg.fit.sim_dir = Some(d.clone());
    }
    let out = out_dir(&cfg)?;
    match (&cfg.fit.sim_dir, cfg.fit.blocks.is_empty()) {
        (Some(_), false) => anyhow::bail!("give either block files or a simulation directory, not both"),
        (None, true) => anyhow::bail!("no input: pass --block (once per block) or --sim-dir"),
        (Some(sim), true) => fit_simulation_run(&cfg, sim, &out),
        (None, false) => fit_blocks(&cfg, &out),
    }
}

fn fit_blocks(cfg: &super::RunConfig, out: &Path) -> anyhow::Result<i32> {
    let fc = &cfg.fit;
    let ranks = fc
        .ranks
        .clone()
        .context("ranks are required: pass --ranks rJ:rI1,rI2,...")?;
    let mut data = io::read_blocks(&fc.blocks)?;
    if fc.center || fc.scale || fc.covariates.is_some() {
        let covariates = match &fc.covariates {
            Some(p) => {
                let ids = data
                    .subject_ids()
                    .expect("blocks read from CSV carry subject ids")
                    .to_vec();
                Some(io::read_covariates(p, &ids)?)
            }
            None => None,
        };
        let (processed, report) = preprocess(&data, covariates.as_ref(), fc.scale)?;
        io::write_json(&out.join("preprocess.json"), &report)?;
        data = processed;
    }
    std::fs::create_dir_all(out)?;
    let res = run_one(&data, &ranks, fc, cfg.seed, out)?;
    write_manifest(out, "fit", cfg, Vec::new())?;
    if !res.converged {
        log::warn!("stopped after {} iterations without reaching tol", res.iterations);
    }
    Ok(exit_code(&[Some(res.converged)]))
}

fn fit_simulation_run(cfg: &super::RunConfig, sim: &Path, out: &Path) -> anyhow::Result<i32> {
    let reps = replicate_dirs(sim)?;
    if reps.is_empty() {
        anyhow::bail!("{}: no cell_*/rep_* directories found", sim.display());
    }
    std::fs::create_dir_all(out)?;
    let rows: Vec<FitRow> = reps
        .par_iter()
        .map(|(c, r, dir)| {
            let attempt = || -> anyhow::Result<FitResult> {
                let manifest: SimManifest = io::read_json(&dir.join(MANIFEST_FILE))?;
                let paths: Vec<_> = (0..manifest.n_blocks).map(|k| dir.join(block_file(k))).collect();
                let data = io::read_blocks(&paths)?;
                let ranks = cfg.fit.ranks.clone().unwrap_or_else(|| true_ranks(&manifest.design));
                let target = super::simulate::cell_dir(out, *c, *r);
                run_one(&data, &ranks, &cfg.fit, replicate_seed(cfg.seed, *c, *r), &target)
            };
            match attempt() {
                Ok(res) => FitRow {
                    cell: *c,
                    replicate: *r,
                    loglik: Some(res.loglik()),
                    aic: Some(res.aic),
                    bic: Some(res.bic),
                    iterations: Some(res.iterations),
                    converged: Some(res.converged),
                    error: None,
                },
                Err(e) => {
                    log::error!("cell {c} replicate {r}: {e:#}");
                    FitRow {
                        cell: *c,
                        replicate: *r,
                        loglik: None,
                        aic: None,
                        bic: None,
                        iterations: None,
                        converged: None,
                        error: Some(format!("{e:#}")),
                    }
                }
            }
        })
        .collect();
    io::write_records(&out.join("fits.csv"), &rows)?;
    let failures = rows
        .iter()
        .filter_map(|r| {
            r.error
                .as_ref()
                .map(|e| format!("cell {} replicate {}: {e}", r.cell, r.replicate))
        })
        .collect();
    write_manifest(out, "fit", cfg, failures)?;
    Ok(exit_code(&rows.iter().map(|r| r.converged).collect::<Vec<_>>()))
}
