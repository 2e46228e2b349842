use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use projive::cli::{replicate_dirs, FitSummary};
use projive::io;
use projive::sim::{block_file, generate, Setting, SimManifest, SimScenario};
use projive::{fit, BlockRanks, FitOptions, InitStrategy};
use sha2::{Digest, Sha256};

fn projive(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_projive")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

const GRID: &str = r#"
[simulate]
replicates = 3
n = 120
p1 = 10
p2 = [12, 15]
r_j = [1, 2]
r2_joint1 = [0.5]
r2_joint2 = [0.4]
settings = ["gaussian"]
"#;

fn simulate_grid(root: &Path, seed: u64) -> PathBuf {
    let cfg = write_config(root, GRID);
    let out = root.join("sim");
    let o = projive(&[
        "simulate",
        "--config",
        s(&cfg),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn checksum(path: &Path) -> String {
    Sha256::digest(std::fs::read(path).unwrap())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[test]
fn simulate_grid_layout_and_calibration() {
    let tmp = tempfile::tempdir().unwrap();
    let out = simulate_grid(tmp.path(), 7);
    let reps = replicate_dirs(&out).unwrap();
    assert_eq!(reps.len(), 12);
    let mut sums = BTreeSet::new();
    for (_, _, dir) in &reps {
        let m: SimManifest = io::read_json(&dir.join("manifest.json")).unwrap();
        let projive::sim::SimDesign::Factorial(sc) = &m.design else {
            panic!("factorial expected")
        };
        for (k, r2) in m.achieved_r2.iter().enumerate() {
            assert!((r2.joint - sc.target_r2_joint[k]).abs() < 1e-6);
            assert!((r2.indiv - sc.target_r2_indiv[k]).abs() < 1e-6);
        }
        sums.insert(checksum(&dir.join(block_file(0))));
    }
    assert_eq!(sums.len(), 12);
    assert!(out.join("manifest.json").exists());
    assert!(out.join("cells.csv").exists());
}

#[test]
fn fit_summary_matches_library_call() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate_grid(tmp.path(), 8);
    let fits = tmp.path().join("fits");
    let o = projive(&["fit", "--sim-dir", s(&sim), "--out", s(&fits)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for (c, r, dir) in replicate_dirs(&sim).unwrap() {
        let m: SimManifest = io::read_json(&dir.join("manifest.json")).unwrap();
        let data = io::read_blocks(&(0..m.n_blocks).map(|k| dir.join(block_file(k))).collect::<Vec<_>>()).unwrap();
        let projive::sim::SimDesign::Factorial(sc) = &m.design else {
            panic!()
        };
        let ranks = BlockRanks::new(sc.r_j, sc.r_i.clone());
        let res = fit(&data, &ranks, &InitStrategy::Cholesky, &FitOptions::default()).unwrap();
        let summary: FitSummary = io::read_json(&fits.join(format!("cell_{c:03}/rep_{r:03}/summary.json"))).unwrap();
        assert_eq!(summary.loglik, res.loglik());
        assert_eq!(summary.iterations, res.iterations);
    }
}

#[test]
fn fit_with_explicit_blocks() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sc = SimScenario::factorial(1, 12, (0.5, 0.5), Setting::Gaussian, 3);
    sc.n = 80;
    sc.p[0] = 10;
    let truth = generate(&sc).unwrap();
    truth.write_dir(tmp.path()).unwrap();
    let out = tmp.path().join("fit");
    let b1 = tmp.path().join(block_file(0));
    let b2 = tmp.path().join(block_file(1));
    let o = projive(&[
        "fit",
        "--block",
        s(&b1),
        "--block",
        s(&b2),
        "--ranks",
        "1:2,2",
        "--noise",
        "diagonal",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "summary.json",
        "scores_joint.csv",
        "loadings_joint_2.csv",
        "noise_1.csv",
        "loglik_trace.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let o = projive(&[
        "fit",
        "--block",
        s(&b1),
        "--block",
        s(&b2),
        "--ranks",
        "1:2,2",
        "--max-iters",
        "2",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_block_file_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere.csv");
    let o = projive(&[
        "fit",
        "--block",
        s(&missing),
        "--block",
        s(&missing),
        "--ranks",
        "1:1,1",
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains(s(&missing)));
}

#[test]
fn malformed_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[fit]\nmax_iters = \"many\"\n");
    let o = projive(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("max_iters"));
    let cfg = write_config(tmp.path(), "[simulate]\nreplicate = 2\n");
    let o = projive(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("replicate"));
}

fn tree_contents(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" || p.parent() != Some(root) {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn fixed_seed_reproduces_simulation_bit_for_bit() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ta = tree_contents(&simulate_grid(a.path(), 11));
    let tb = tree_contents(&simulate_grid(b.path(), 11));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    assert!(ta == tb);
}

#[test]
fn truth_against_truth_evaluation_and_summary_means() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate_grid(tmp.path(), 12);
    let out = tmp.path().join("eval");
    let o = projive(&["evaluate", "--sim-dir", s(&sim), "--fit-dir", s(&sim), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rec = csv::Reader::from_path(out.join("recovery.csv")).unwrap();
    let h = rec.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let (ci, mi, bi, vi) = (col("cell"), col("metric"), col("block"), col("value"));
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    let mut count = 0;
    for r in rec.records() {
        let r = r.unwrap();
        let v: f64 = r[vi].parse().unwrap();
        assert!(v < 1e-10, "{r:?}");
        groups
            .entry((r[ci].into(), r[mi].into(), r[bi].into()))
            .or_default()
            .push(v);
        count += 1;
    }
    assert_eq!(count, 12 * 7);
    let mut sum = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let h = sum.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let (ci, mi, bi, mean) = (col("cell"), col("metric"), col("block"), col("mean"));
    let mut n_rows = 0;
    for r in sum.records() {
        let r = r.unwrap();
        let vals = &groups[&(r[ci].into(), r[mi].into(), r[bi].into())];
        let expected = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((r[mean].parse::<f64>().unwrap() - expected).abs() < 1e-12);
        n_rows += 1;
    }
    assert_eq!(n_rows, groups.len());
}

#[test]
fn select_rank_on_identical_and_independent_blocks() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sc = SimScenario::factorial(0, 20, (0.0, 0.0), Setting::Gaussian, 5);
    sc.n = 300;
    let truth = generate(&sc).unwrap();
    truth.write_dir(tmp.path()).unwrap();
    let b1 = tmp.path().join(block_file(0));
    let b2 = tmp.path().join(block_file(1));

    let same = tmp.path().join("same");
    let o = projive(&[
        "select-rank",
        "--block",
        s(&b1),
        "--block",
        s(&b1),
        "--ranks",
        "1:1,1",
        "--n-perm",
        "99",
        "--out",
        s(&same),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let res: projive::rank_select::PermTestResult = io::read_json(&same.join("perm_test.json")).unwrap();
    assert!(res.selected_r_j >= 1);
    assert!(same.join("eigen_spectrum.csv").exists());

    let indep = tmp.path().join("indep");
    let o = projive(&[
        "select-rank",
        "--block",
        s(&b1),
        "--block",
        s(&b2),
        "--ranks",
        "1:1,1",
        "--out",
        s(&indep),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let res: projive::rank_select::PermTestResult = io::read_json(&indep.join("perm_test.json")).unwrap();
    assert_eq!(res.selected_r_j, 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("selected joint rank: 0"));

    let cfg = write_config(
        tmp.path(),
        &format!(
            "[select_rank]\nblocks = [{:?}, {:?}]\nmode = \"ic\"\ncandidates = [\"1:1,1\", \"2:1,1\"]\n",
            s(&b1),
            s(&b2)
        ),
    );
    let ic = tmp.path().join("ic");
    let o = projive(&["select-rank", "--config", s(&cfg), "--out", s(&ic)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let grid: projive::rank_select::IcGrid = io::read_json(&ic.join("ic_grid.json")).unwrap();
    assert_eq!(grid.entries.len(), 2);
}
