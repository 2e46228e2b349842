use anyhow::Context;
use serde::Serialize;

use crate::io;
use crate::rank_select::{eigen_spectrum, ic_grid, permutation_joint_rank};

use super::config::SelectMode;
use super::{out_dir, resolve_config, write_manifest, SelectArgs, EXIT_OK};

#[derive(Debug, Serialize)]
struct PermRow {
    component: usize,
    observed: f64,
    null_quantile: f64,
    accepted: bool,
}

#[derive(Debug, Serialize)]
struct IcRow {
    ranks: String,
    loglik: Option<f64>,
    aic: Option<f64>,
    bic: Option<f64>,
    n_parameters: Option<usize>,
    iterations: Option<usize>,
    converged: Option<bool>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct SpectrumRow {
    block: usize,
    index: usize,
    eigenvalue: f64,
}

pub fn cmd_select_rank(args: &SelectArgs) -> anyhow::Result<i32> {
    let mut cfg = resolve_config(&args.common)?;
    let sc = &mut cfg.select_rank;
    if !args.blocks.is_empty() {
        sc.blocks = args.blocks.clone();
    }
    if let Some(n) = args.n_perm {
        sc.n_perm = n;
    }
    if let Some(a) = args.alpha {
        sc.alpha = a;
    }
    let out = out_dir(&cfg)?;
    let sc = &cfg.select_rank;
    if sc.blocks.is_empty() {
        anyhow::bail!("no input: pass --block once per block");
    }
    let data = io::read_blocks(&sc.blocks)?;

    let spectrum: Vec<SpectrumRow> = eigen_spectrum(&data)?
        .into_iter()
        .enumerate()
        .flat_map(|(k, ev)| {
            ev.into_iter().enumerate().map(move |(i, e)| SpectrumRow {
                block: k + 1,
                index: i + 1,
                eigenvalue: e,
            })
        })
        .collect();
    io::write_records(&out.join("eigen_spectrum.csv"), &spectrum)?;

    if matches!(sc.mode, SelectMode::Permutation | SelectMode::Both) {
        let totals = match (sc.total_ranks, &cfg.fit.ranks) {
            (Some(t), _) => (t[0], t[1]),
            (None, Some(r)) if r.individual.len() == 2 => (r.joint + r.individual[0], r.joint + r.individual[1]),
            _ => anyhow::bail!("the permutation test needs select_rank.total_ranks or --ranks"),
        };
        let res = permutation_joint_rank(&data, totals, sc.n_perm, sc.alpha, cfg.seed)?;
        let rows: Vec<PermRow> = res
            .observed_stats
            .iter()
            .zip(&res.null_quantiles)
            .enumerate()
            .map(|(i, (&o, &q))| PermRow {
                component: i + 1,
                observed: o,
                null_quantile: q,
                accepted: i < res.selected_r_j,
            })
            .collect();
        io::write_records(&out.join("perm_test.csv"), &rows)?;
        io::write_json(&out.join("perm_test.json"), &res)?;
        println!("selected joint rank: {}", res.selected_r_j);
    }

    if matches!(sc.mode, SelectMode::Ic | SelectMode::Both) {
        let candidates = if sc.candidates.is_empty() {
            vec![cfg
                .fit
                .ranks
                .clone()
                .context("the IC grid needs select_rank.candidates or --ranks")?]
        } else {
            sc.candidates.clone()
        };
        let grid = ic_grid(&data, &candidates, &cfg.fit.options(), cfg.fit.init, cfg.seed)?;
        let rows: Vec<IcRow> = grid
            .entries
            .iter()
            .map(|e| IcRow {
                ranks: e.ranks.to_string(),
                loglik: e.loglik,
                aic: e.aic,
                bic: e.bic,
                n_parameters: e.n_parameters,
                iterations: e.iterations,
                converged: e.converged,
                error: e.error.clone(),
            })
            .collect();
        io::write_records(&out.join("ic_grid.csv"), &rows)?;
        io::write_json(&out.join("ic_grid.json"), &grid)?;
        if let Some(best) = grid.best_by_bic() {
            println!("lowest BIC: {}", best.ranks);
        }
    }
    write_manifest(&out, "select-rank", &cfg, Vec::new())?;
    Ok(EXIT_OK)
}
