use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::rng::derive_seed;
use crate::sim::{generate, generate_feng, setting_label, SimScenario, SimTruth};

use super::config::{DesignKind, SimulateConfig};
use super::{out_dir, resolve_config, write_manifest, SimulateArgs, EXIT_ERROR, EXIT_OK};

/// One cell of a simulation grid; replicate seeds are filled in later.
#[derive(Debug, Clone)]
enum Cell {
    Factorial(SimScenario),
    Feng {
        n: usize,
        p1: usize,
        p2: usize,
        noise_sd: f64,
    },
}

#[derive(Debug, Serialize)]
struct CellRow {
    cell: usize,
    design: &'static str,
    setting: String,
    n: usize,
    p1: usize,
    p2: usize,
    r_j: usize,
    r2_joint1: Option<f64>,
    r2_joint2: Option<f64>,
    r2_indiv: Option<f64>,
}

fn cells(cfg: &SimulateConfig) -> Vec<Cell> {
    match cfg.design {
        DesignKind::Feng => vec![Cell::Feng {
            n: cfg.feng.n,
            p1: cfg.feng.p1,
            p2: cfg.feng.p2,
            noise_sd: cfg.feng.noise_sd,
        }],
        DesignKind::Factorial => {
            let mut out = Vec::new();
            for &setting in &cfg.settings {
                for &r_j in &cfg.r_j {
                    for &p2 in &cfg.p2 {
                        for &t1 in &cfg.r2_joint1 {
                            for &t2 in &cfg.r2_joint2 {
                                let mut s = SimScenario::factorial(r_j, p2, (t1, t2), setting, 0);
                                s.n = cfg.n;
                                s.p[0] = cfg.p1;
                                s.r_i = cfg.r_i.clone();
                                s.target_r2_indiv = vec![cfg.r2_indiv; 2];
                                out.push(Cell::Factorial(s));
                            }
                        }
                    }
                }
            }
            out
        }
    }
}

fn cell_row(index: usize, cell: &Cell) -> CellRow {
    match cell {
        Cell::Factorial(s) => CellRow {
            cell: index,
            design: "factorial",
            setting: setting_label(s.score_dist, s.loading_dist).into(),
            n: s.n,
            p1: s.p[0],
            p2: s.p[1],
            r_j: s.r_j,
            r2_joint1: Some(s.target_r2_joint[0]),
            r2_joint2: Some(s.target_r2_joint[1]),
            r2_indiv: Some(s.target_r2_indiv[0]),
        },
        Cell::Feng { n, p1, p2, .. } => CellRow {
            cell: index,
            design: "feng",
            setting: "feng".into(),
            n: *n,
            p1: *p1,
            p2: *p2,
            r_j: 1,
            r2_joint1: None,
            r2_joint2: None,
            r2_indiv: None,
        },
    }
}

pub(crate) fn cell_dir(root: &Path, cell: usize, rep: usize) -> PathBuf {
    root.join(format!("cell_{cell:03}")).join(format!("rep_{rep:03}"))
}

/// Seed of replicate `rep` in cell `cell`.
pub(crate) fn replicate_seed(seed: u64, cell: usize, rep: usize) -> u64 {
    derive_seed(seed, &[cell as u64, rep as u64])
}

fn parse_index(name: &str, prefix: &str) -> Option<usize> {
    name.strip_prefix(prefix)?.parse().ok()
}

fn sorted_children(dir: &Path, prefix: &str) -> std::io::Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        if let Some(i) = entry.file_name().to_str().and_then(|n| parse_index(n, prefix)) {
            out.push((i, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// `(cell, replicate, path)` for every replicate directory under a
/// simulation run, in index order.
pub fn replicate_dirs(root: &Path) -> anyhow::Result<Vec<(usize, usize, PathBuf)>> {
    let mut out = Vec::new();
    let cells = sorted_children(root, "cell_").map_err(|e| anyhow::anyhow!("{}: {e}", root.display()))?;
    for (c, cdir) in cells {
        for (r, rdir) in sorted_children(&cdir, "rep_").map_err(|e| anyhow::anyhow!("{}: {e}", cdir.display()))? {
            out.push((c, r, rdir));
        }
    }
    Ok(out)
}

pub fn cmd_simulate(args: &SimulateArgs) -> anyhow::Result<i32> {
    let mut cfg = resolve_config(&args.common)?;
    if let Some(r) = args.replicates {
        cfg.simulate.replicates = r;
    }
    let out = out_dir(&cfg)?;
    std::fs::create_dir_all(&out)?;
    let grid = cells(&cfg.simulate);
    if grid.is_empty() || cfg.simulate.replicates == 0 {
        anyhow::bail!("the simulation grid is empty");
    }

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..cfg.simulate.replicates).map(move |r| (c + 1, r + 1)))
        .collect();
    let failures: Vec<String> = jobs
        .par_iter()
        .filter_map(|&(c, r)| {
            let seed = replicate_seed(cfg.seed, c, r);
            let truth: crate::Result<SimTruth> = match &grid[c - 1] {
                Cell::Factorial(s) => {
                    let mut s = s.clone();
                    s.seed = seed;
                    generate(&s)
                }
                Cell::Feng { n, p1, p2, noise_sd } => generate_feng(*n, *p1, *p2, *noise_sd, seed),
            };
            let res = truth.and_then(|t| t.write_dir(&cell_dir(&out, c, r)));
            match res {
                Ok(()) => None,
                Err(e) => {
                    log::error!("cell {c} replicate {r}: {e}");
                    Some(format!("cell {c} replicate {r}: {e}"))
                }
            }
        })
        .collect();

    let rows: Vec<CellRow> = grid.iter().enumerate().map(|(i, c)| cell_row(i + 1, c)).collect();
    crate::io::write_records(&out.join("cells.csv"), &rows)?;
    let code = if failures.is_empty() { EXIT_OK } else { EXIT_ERROR };
    write_manifest(&out, "simulate", &cfg, failures)?;
    Ok(code)
}
