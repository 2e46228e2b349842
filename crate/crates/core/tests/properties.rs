mod common;

use common::*;
use nalgebra::DMatrix;
use projive::linalg::random_orthogonal;
use projive::metrics::chordal_norm;
use projive::preprocess::{center_and_scale, residualize};
use projive::sim::{
    draw_joint_scores, draw_loadings, generate, solve_scale_constants, LoadingDist, ScoreDist, Setting, SimScenario,
    TraceTerms,
};
use projive::{fit, log_likelihood, model_covariance, BlockRanks, FitOptions, InitStrategy, NoiseModel, ProjiveParams};
use proptest::prelude::*;

fn noise_model(diag: bool) -> NoiseModel {
    if diag {
        NoiseModel::Diagonal
    } else {
        NoiseModel::Isotropic
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn em_trace_is_monotone(seed in any::<u64>(), p1 in 3usize..12, p2 in 3usize..12, n in 30usize..120, diag in any::<bool>(), random_init in any::<bool>()) {
        let mut g = rng(seed);
        let ranks = BlockRanks::new(1, vec![1, 1]);
        let truth = random_params(&[p1, p2], &ranks, NoiseModel::Isotropic, &mut g);
        let data = sample_model(&truth, n, &mut g);
        let init = if random_init { InitStrategy::RandomNormal(seed) } else { InitStrategy::Cholesky };
        let opts = FitOptions { noise_model: noise_model(diag), max_iters: 300, ..FitOptions::default() };
        let res = fit(&data, &ranks, &init, &opts).unwrap();
        for w in res.loglik_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-8 * (w[0].abs() + 1.0));
        }
    }

    #[test]
    fn rotations_preserve_likelihood_and_covariance(seed in any::<u64>(), rj in 1usize..4, ri1 in 0usize..3, ri2 in 0usize..3, diag in any::<bool>()) {
        let mut g = rng(seed);
        let ranks = BlockRanks::new(rj, vec![ri1, ri2]);
        let params = random_params(&[6, 7], &ranks, noise_model(diag), &mut g);
        let data = random_data(&[6, 7], 20, &mut g);
        let o = random_orthogonal(rj, &mut g);
        let rotated = ProjiveParams::new(
            params.w_joint().iter().map(|w| w * &o).collect(),
            params.w_indiv().iter().map(|w| w * random_orthogonal(w.ncols(), &mut g)).collect(),
            params.noise().to_vec(),
        ).unwrap();
        let a = log_likelihood(&data, &params).unwrap();
        let b = log_likelihood(&data, &rotated).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
        prop_assert!(rel_frobenius(&model_covariance(&rotated), &model_covariance(&params)) < 1e-12);
    }

    #[test]
    fn model_covariance_is_symmetric_and_bounded_below(seed in any::<u64>(), diag in any::<bool>()) {
        let mut g = rng(seed);
        let params = random_params(&[4, 5], &BlockRanks::new(2, vec![1, 1]), noise_model(diag), &mut g);
        let c = model_covariance(&params);
        prop_assert!((&c - c.transpose()).amax() == 0.0);
        let min_noise = params.noise().iter().map(|v| v.min()).fold(f64::INFINITY, f64::min);
        let (eig, _) = projive::linalg::sym_eigen_desc(&c);
        prop_assert!(eig[eig.len() - 1] >= min_noise * (1.0 - 1e-10));
    }

    #[test]
    fn chordal_norm_is_symmetric_and_column_space_invariant(seed in any::<u64>(), p in 4usize..20, ra in 1usize..4, rb in 1usize..4) {
        let mut g = rng(seed);
        let a = randn(p, ra, &mut g);
        let b = randn(p, rb, &mut g);
        let d = chordal_norm(&a, &b).unwrap();
        prop_assert!((d - chordal_norm(&b, &a).unwrap()).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&d));
        let ga = randn(ra, ra, &mut g) + DMatrix::identity(ra, ra) * 3.0;
        let gb = randn(rb, rb, &mut g) + DMatrix::identity(rb, rb) * 3.0;
        prop_assert!((chordal_norm(&(&a * ga), &(&b * gb)).unwrap() - d).abs() < 1e-10);
        prop_assert!(chordal_norm(&a, &a).unwrap() < 1e-10);
    }

    #[test]
    fn center_scale_round_trips(seed in any::<u64>(), p in 1usize..8, n in 3usize..40, scale in any::<bool>()) {
        let mut g = rng(seed);
        let raw = randn(p, n, &mut g).map(|v| 5.0 * v + 2.0);
        let data = projive::MultiBlockData::new(vec![raw.clone(), randn(2, n, &mut g)]).unwrap();
        let (out, report) = center_and_scale(&data, scale).unwrap();
        let back = report.inverse_transform(&out, None).unwrap();
        prop_assert!(rel_frobenius(back.block(0), &raw) < 1e-10);
    }

    #[test]
    fn residualize_is_idempotent(seed in any::<u64>(), q in 0usize..4, n in 10usize..40) {
        let mut g = rng(seed);
        let data = random_data(&[3, 4], n, &mut g);
        let cov = randn(n, q, &mut g);
        let once = residualize(&data, &cov).unwrap();
        let twice = residualize(&once, &cov).unwrap();
        for k in 0..2 {
            prop_assert!((once.block(k) - twice.block(k)).amax() < 1e-10);
        }
    }

    #[test]
    fn scale_solver_hits_targets(seed in any::<u64>(), tj in 0.05f64..0.6, ti in 0.05f64..0.35) {
        let mut g = rng(seed);
        let (p, n) = (10, 60);
        let j = randn(p, 2, &mut g) * randn(2, n, &mut g);
        let a = randn(p, 2, &mut g) * randn(2, n, &mut g);
        let e = randn(p, n, &mut g);
        let sc = solve_scale_constants(&j, &a, &e, tj, ti).unwrap();
        let (d, c) = (sc.joint, sc.indiv);
        let full = &j * d + &a * c + &e;
        let tot = full.norm_squared();
        prop_assert!(((&j * d).norm_squared() / tot - tj).abs() < 1e-8);
        prop_assert!(((&a * c).norm_squared() / tot - ti).abs() < 1e-8);
        let (rj, ri) = TraceTerms::new(&j, &a, &e).ratios(d, c);
        prop_assert!((rj - tj).abs() < 1e-8 && (ri - ti).abs() < 1e-8);
    }

    #[test]
    fn generation_is_seed_deterministic(seed in any::<u64>(), rj in 1usize..3, mixture in any::<bool>()) {
        let setting = if mixture { Setting::MixtureRademacher } else { Setting::Gaussian };
        let mut s = SimScenario::factorial(rj, 15, (0.3, 0.4), setting, seed);
        s.n = 60;
        s.p[0] = 12;
        let a = generate(&s).unwrap();
        let b = generate(&s).unwrap();
        prop_assert_eq!(&a.data, &b.data);
        s.seed = seed.wrapping_add(1);
        let c = generate(&s).unwrap();
        prop_assert!(a.data.block(0) != c.data.block(0));
    }
}

#[test]
fn mixture_scores_have_expected_mean() {
    let n = 100_000;
    let z = draw_joint_scores(ScoreDist::MixtureGaussian, n, 1, &mut rng(21));
    let mean = z.mean();
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - 0.4).abs() < 4.0 * se, "mean {mean}, se {se}");
    let modes = [-4.0, 0.0, 4.0].map(|m| z.iter().filter(|v| (*v - m).abs() < 0.5).count());
    assert!(modes.iter().all(|&c| c > n / 20), "{modes:?}");
    let valleys = [-2.0, 2.0].map(|m| z.iter().filter(|v| (*v - m).abs() < 0.5).count());
    assert!(valleys.iter().all(|&v| v < modes[0].min(modes[1]).min(modes[2])));
}

#[test]
fn rademacher_loadings_are_balanced_signs() {
    let w = draw_loadings(LoadingDist::Rademacher, 400, 50, &mut rng(22));
    assert!(w.iter().all(|&v| v == 1.0 || v == -1.0));
    let n = w.len() as f64;
    let prop = w.iter().filter(|&&v| v == 1.0).count() as f64 / n;
    assert!((prop - 0.5).abs() < 4.0 * (0.25 / n).sqrt());
}

#[test]
fn one_em_step_from_truth_stays_near_truth() {
    let mut g = rng(23);
    let ranks = BlockRanks::new(1, vec![1, 1]);
    let params = random_params(&[4, 5], &ranks, NoiseModel::Isotropic, &mut g);
    let data = sample_model(&params, 100_000, &mut g);
    let scores = projive::e_step(&data, &params).unwrap();
    let next = projive::m_step(&data, &scores, &params.layout(), NoiseModel::Isotropic).unwrap();
    let mut dist2 = 0.0;
    for k in 0..2 {
        dist2 += (&next.w_joint()[k] - &params.w_joint()[k]).norm_squared();
        dist2 += (&next.w_indiv()[k] - &params.w_indiv()[k]).norm_squared();
        dist2 += (next.noise()[k].min() - params.noise()[k].min()).powi(2);
    }
    assert!(dist2.sqrt() < 0.05, "moved {}", dist2.sqrt());
}
