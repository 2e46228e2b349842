use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io;
use crate::metrics::{compare_components, Components};
use crate::sim::{setting_label, SimDesign, SimTruth, MANIFEST_FILE};

use super::fit::{read_fit_components, SUMMARY_FILE};
use super::simulate::{cell_dir, replicate_dirs};
use super::{out_dir, resolve_config, write_manifest, EvaluateArgs, EXIT_OK};

/// Factors identifying a simulation cell in report tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CellFactors {
    design: String,
    setting: String,
    r_j: usize,
    p2: usize,
    r2_joint1: Option<f64>,
    r2_joint2: Option<f64>,
}

impl CellFactors {
    fn of(design: &SimDesign) -> Self {
        match design {
            SimDesign::Factorial(s) => Self {
                design: "factorial".into(),
                setting: setting_label(s.score_dist, s.loading_dist).into(),
                r_j: s.r_j,
                p2: s.p[1],
                r2_joint1: Some(s.target_r2_joint[0]),
                r2_joint2: Some(s.target_r2_joint[1]),
            },
            SimDesign::Feng { p2, .. } => Self {
                design: "feng".into(),
                setting: "feng".into(),
                r_j: 1,
                p2: *p2,
                r2_joint1: None,
                r2_joint2: None,
            },
        }
    }
}

/// One row of `recovery.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub cell: usize,
    pub replicate: usize,
    pub design: String,
    pub setting: String,
    pub r_j: usize,
    pub p2: usize,
    pub r2_joint1: Option<f64>,
    pub r2_joint2: Option<f64>,
    pub metric: String,
    pub block: usize,
    pub value: Option<f64>,
    pub error: Option<String>,
}

/// One row of `summary.csv`: mean and sample standard deviation over the
/// replicates of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cell: usize,
    pub design: String,
    pub setting: String,
    pub r_j: usize,
    pub p2: usize,
    pub r2_joint1: Option<f64>,
    pub r2_joint2: Option<f64>,
    pub metric: String,
    pub block: usize,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    /// `mean (sd)` rounded to two decimals.
    pub display: String,
}

fn estimated_components(dir: &Path) -> anyhow::Result<Components> {
    if dir.join(SUMMARY_FILE).exists() {
        read_fit_components(dir)
    } else if dir.join(MANIFEST_FILE).exists() {
        Ok(Components::from_truth(&SimTruth::read_dir(dir)?))
    } else {
        anyhow::bail!("{}: no fit outputs found", dir.display())
    }
}

fn evaluate_replicate(cell: usize, rep: usize, sim_rep: &Path, fit_root: &Path) -> Vec<RecoveryRow> {
    let truth = match SimTruth::read_dir(sim_rep) {
        Ok(t) => t,
        Err(e) => return vec![error_row(cell, rep, None, format!("{e}"))],
    };
    let factors = CellFactors::of(&truth.design);
    let report = estimated_components(&cell_dir(fit_root, cell, rep))
        .and_then(|est| Ok(compare_components(&est, &Components::from_truth(&truth))?));
    match report {
        Ok(r) => r
            .rows()
            .into_iter()
            .map(|m| RecoveryRow {
                cell,
                replicate: rep,
                design: factors.design.clone(),
                setting: factors.setting.clone(),
                r_j: factors.r_j,
                p2: factors.p2,
                r2_joint1: factors.r2_joint1,
                r2_joint2: factors.r2_joint2,
                metric: m.metric,
                block: m.block,
                value: m.value,
                error: None,
            })
            .collect(),
        Err(e) => vec![error_row(cell, rep, Some(&factors), format!("{e:#}"))],
    }
}

fn error_row(cell: usize, rep: usize, f: Option<&CellFactors>, error: String) -> RecoveryRow {
    RecoveryRow {
        cell,
        replicate: rep,
        design: f.map(|f| f.design.clone()).unwrap_or_default(),
        setting: f.map(|f| f.setting.clone()).unwrap_or_default(),
        r_j: f.map_or(0, |f| f.r_j),
        p2: f.map_or(0, |f| f.p2),
        r2_joint1: f.and_then(|f| f.r2_joint1),
        r2_joint2: f.and_then(|f| f.r2_joint2),
        metric: "all".into(),
        block: 0,
        value: None,
        error: Some(error),
    }
}

/// Groups rows by `(cell, metric, block)` and reports mean and SD of the
/// available values.
pub fn summarize(rows: &[RecoveryRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(usize, String, usize), Vec<&RecoveryRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.value.is_some()) {
        groups.entry((r.cell, r.metric.clone(), r.block)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let vals: Vec<f64> = g.iter().filter_map(|r| r.value).collect();
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            let f = g[0];
            SummaryRow {
                cell: f.cell,
                design: f.design.clone(),
                setting: f.setting.clone(),
                r_j: f.r_j,
                p2: f.p2,
                r2_joint1: f.r2_joint1,
                r2_joint2: f.r2_joint2,
                metric: f.metric.clone(),
                block: f.block,
                n,
                mean,
                sd,
                display: format!("{mean:.2} ({sd:.2})"),
            }
        })
        .collect()
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> anyhow::Result<i32> {
    let mut cfg = resolve_config(&args.common)?;
    if let Some(d) = &args.sim_dir {
        cfg.evaluate.sim_dir = Some(d.clone());
    }
    if let Some(d) = &args.fit_dir {
        cfg.evaluate.fit_dir = Some(d.clone());
    }
    let out = out_dir(&cfg)?;
    let sim = cfg
        .evaluate
        .sim_dir
        .clone()
        .ok_or_else(|| anyhow::anyhow!("no simulation directory: pass --sim-dir"))?;
    let fit_root = cfg
        .evaluate
        .fit_dir
        .clone()
        .ok_or_else(|| anyhow::anyhow!("no fit directory: pass --fit-dir"))?;
    let reps = replicate_dirs(&sim)?;
    if reps.is_empty() {
        anyhow::bail!("{}: no cell_*/rep_* directories found", sim.display());
    }
    let rows: Vec<RecoveryRow> = reps
        .par_iter()
        .flat_map_iter(|(c, r, dir)| evaluate_replicate(*c, *r, dir, &fit_root))
        .collect();
    std::fs::create_dir_all(&out)?;
    io::write_records(&out.join("recovery.csv"), &rows)?;
    io::write_records(&out.join("summary.csv"), &summarize(&rows))?;
    let failures = rows
        .iter()
        .filter_map(|r| {
            r.error
                .as_ref()
                .map(|e| format!("cell {} replicate {}: {e}", r.cell, r.replicate))
        })
        .collect();
    write_manifest(&out, "evaluate", &cfg, failures)?;
    Ok(EXIT_OK)
}
