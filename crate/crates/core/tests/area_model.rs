use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

use sae_core::area::{
    area_bp, area_g1, area_mse_plugin, bp_gradient, draw_counts, fit_area_model, information_counts, loglik_counts,
    nb_information, nb_loglik, nb_score, AreaError, Design, FitAlgorithm, FitOptions, InformationKind, ModelParams,
};
use sae_core::data::{AreaDataset, AreaRecord};
use sae_core::numerics::{sample_gamma, sample_poisson, RngStream};
use sae_core::sim::design::{area_design, AreaDesignConfig, AREA_BETA, AREA_DELTA};
use sae_testkit::{gradient, integrate_panels, jacobian, nb_logpmf, poisson_gamma_mixture_loglik, rel_err};
use statrs::function::gamma::ln_gamma;

fn dataset(rows: &[(u64, Vec<f64>)]) -> AreaDataset {
    let p = rows[0].1.len();
    let areas = rows
        .iter()
        .enumerate()
        .map(|(i, (y, x))| AreaRecord { area_id: format!("a{i}"), y: *y, x: x.clone(), population: 10 * y + 50 })
        .collect();
    AreaDataset::new(areas, (1..p).map(|k| format!("x{k}")).collect()).unwrap()
}

/// Random data of D areas with λ ≤ 100 and β drawn near the truth that
/// generated the counts.
fn random_instance(rng: &mut RngStream, d: usize, p: usize) -> (AreaDataset, ModelParams) {
    let beta: Vec<f64> = (0..p).map(|k| if k == 0 { rng.random_range(0.0..3.5) } else { rng.random_range(-0.5..0.5) }).collect();
    let delta = (rng.random_range(0.1f64.ln()..50f64.ln())).exp();
    let rows: Vec<(u64, Vec<f64>)> = (0..d)
        .map(|_| {
            let mut x = vec![1.0];
            x.extend((1..p).map(|_| rng.random_range(-1.0..1.0)));
            let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let lam = eta.exp().min(100.0);
            let w = sample_gamma(rng, delta, delta).unwrap();
            (sample_poisson(rng, lam * w).unwrap(), x)
        })
        .collect();
    (dataset(&rows), ModelParams::new(beta, delta).unwrap())
}

fn lambda(params: &ModelParams, x: &[f64]) -> f64 {
    x.iter().zip(&params.beta).map(|(a, b)| a * b).sum::<f64>().exp()
}

#[test]
fn loglik_matches_mixture_quadrature() {
    let mut rng = RngStream::new(11, 0, 0);
    for _ in 0..50 {
        let (data, params) = random_instance(&mut rng, 4, 2);
        let oracle: f64 = data
            .areas
            .iter()
            .map(|r| poisson_gamma_mixture_loglik(r.y, lambda(&params, &r.x).min(100.0), params.delta))
            .sum();
        let got = nb_loglik(&data, &params).unwrap();
        assert!(rel_err(got, oracle, 1e-300) < 1e-8, "{got} vs {oracle}");
    }
}

#[test]
fn loglik_matches_log_gamma_pmf() {
    let mut rng = RngStream::new(12, 0, 0);
    for _ in 0..50 {
        let (data, params) = random_instance(&mut rng, 8, 3);
        let want: f64 = data
            .areas
            .iter()
            .map(|r| nb_logpmf(r.y, lambda(&params, &r.x), params.delta) + ln_gamma(r.y as f64 + 1.0))
            .sum();
        let got = nb_loglik(&data, &params).unwrap();
        assert!(rel_err(got, want, 1.0) < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn zero_count_area_gives_closed_value() {
    let design = Design { d: 1, p: 1, x: vec![1.0] };
    let params = ModelParams::new(vec![1.3], 0.7).unwrap();
    let l = 1.3f64.exp();
    let want = -0.7 * (l / 0.7).ln_1p();
    let got = loglik_counts(&design, &[0], &params).unwrap();
    assert!((got - want).abs() < 1e-14);
}

#[test]
fn overflowing_predictor_is_reported() {
    let data = dataset(&[(1, vec![1.0]), (2, vec![1.0])]);
    let params = ModelParams::new(vec![800.0], 1.0).unwrap();
    assert_eq!(nb_loglik(&data, &params), Err(AreaError::NonFiniteResult));
}

/// θ = (β, α) as a flat vector.
fn loglik_at(data: &AreaDataset, theta: &[f64]) -> f64 {
    let p = theta.len() - 1;
    nb_loglik(data, &ModelParams::from_alpha(theta[..p].to_vec(), theta[p]).unwrap()).unwrap()
}

#[test]
fn score_matches_finite_differences() {
    let mut rng = RngStream::new(13, 0, 0);
    for _ in 0..100 {
        let (data, params) = random_instance(&mut rng, 6, 3);
        let mut theta = params.beta.clone();
        theta.push(params.alpha());
        let fd = gradient(&|t: &[f64]| loglik_at(&data, t), &theta, 1e-6);
        let s = nb_score(&data, &params).unwrap();
        for (a, b) in s.iter().zip(&fd) {
            assert!(rel_err(*a, *b, 1.0) < 1e-5, "{s:?} vs {fd:?}");
        }
    }
}

#[test]
fn observed_information_is_negative_hessian() {
    let mut rng = RngStream::new(14, 0, 0);
    for _ in 0..50 {
        let (data, params) = random_instance(&mut rng, 6, 3);
        let mut theta = params.beta.clone();
        theta.push(params.alpha());
        let p = theta.len() - 1;
        let h = jacobian(
            &|t: &[f64]| nb_score(&data, &ModelParams::from_alpha(t[..p].to_vec(), t[p]).unwrap()).unwrap(),
            &theta,
            1e-6,
        );
        let j = information_counts(
            &Design::from_dataset(&data),
            &data.areas.iter().map(|a| a.y).collect::<Vec<_>>(),
            &params,
            InformationKind::Observed,
        )
        .unwrap();
        for r in 0..=p {
            for c in 0..=p {
                assert!(rel_err(j[(r, c)], -h[r][c], 1.0) < 1e-4, "({r},{c}) {} vs {}", j[(r, c)], -h[r][c]);
            }
        }
    }
}

#[test]
fn fisher_information_is_expected_observed_information() {
    let rows = [(0u64, vec![1.0, 0.3]), (0, vec![1.0, -0.8]), (0, vec![1.0, 1.1])];
    for &(b0, delta) in &[(0.5, 0.3), (2.0, 2.48), (3.5, 20.0)] {
        let params = ModelParams::new(vec![b0, 0.4], delta).unwrap();
        let data = dataset(&rows);
        let fisher = nb_information(&data, &params, InformationKind::Fisher).unwrap();
        let mut expected = DMatrix::<f64>::zeros(3, 3);
        for r in &data.areas {
            let lam = lambda(&params, &r.x);
            let design = Design { d: 1, p: 2, x: r.x.clone() };
            let sd = (lam + lam * lam / delta).sqrt();
            let top = (lam + 60.0 * sd + 60.0) as u64;
            for y in 0..=top {
                let pr = nb_logpmf(y, lam, delta).exp();
                expected += information_counts(&design, &[y], &params, InformationKind::Observed).unwrap() * pr;
            }
        }
        assert_eq!(fisher[(0, 2)], 0.0);
        assert_eq!(fisher[(1, 2)], 0.0);
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (fisher[(i, j)] - expected[(i, j)]).abs() < 1e-7 * expected[(i, i)].abs().max(1e-3),
                    "({i},{j}) {} vs {}",
                    fisher[(i, j)],
                    expected[(i, j)]
                );
            }
        }
        let beta_block = fisher.view((0, 0), (2, 2)).into_owned();
        assert!(beta_block.cholesky().is_some());
    }
}

#[test]
fn beta_score_vanishes_when_counts_equal_means() {
    let data = dataset(&[(1, vec![1.0, 0.4]), (1, vec![1.0, -2.0]), (1, vec![1.0, 7.0])]);
    let s = nb_score(&data, &ModelParams::new(vec![0.0, 0.0], 1.7).unwrap()).unwrap();
    assert_eq!(s[0], 0.0);
    assert_eq!(s[1], 0.0);
}

fn case_study_replicate(seed: u64) -> AreaDataset {
    let base = area_design(&AreaDesignConfig::default()).unwrap();
    let params = ModelParams::new(AREA_BETA.to_vec(), AREA_DELTA).unwrap();
    let lam = Design::from_dataset(&base).lambdas(&params.beta).unwrap();
    let (_, y) = draw_counts(&lam, params.delta, &mut RngStream::new(seed, 0, 1)).unwrap();
    base.with_counts(&y)
}

#[test]
fn fits_converge_with_small_score() {
    for seed in 0..6 {
        let data = case_study_replicate(seed);
        let fit = fit_area_model(&data, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(!fit.boundary);
        let s = nb_score(&data, &fit.params).unwrap();
        let max = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 1e-7, "seed {seed}: |score| = {max}");
        assert!(fit.score_max_norm <= 1e-8, "seed {seed}: {}", fit.score_max_norm);
        assert!((fit.params.delta - AREA_DELTA).abs() < 2.5, "{}", fit.params.delta);
    }
}

#[test]
fn fisher_scoring_and_newton_agree() {
    for seed in 20..24 {
        let data = case_study_replicate(seed);
        let fs = fit_area_model(&data, &FitOptions::default()).unwrap();
        let nr = fit_area_model(&data, &FitOptions { algorithm: FitAlgorithm::NewtonRaphson, ..Default::default() }).unwrap();
        assert_eq!(nr.algorithm, FitAlgorithm::NewtonRaphson);
        for (a, b) in fs.params.beta.iter().zip(&nr.params.beta) {
            assert!(rel_err(*a, *b, 1.0) < 1e-6);
        }
        assert!(rel_err(fs.params.delta, nr.params.delta, 1.0) < 1e-6);
    }
}

#[test]
fn pure_poisson_data_hits_the_boundary() {
    let base = area_design(&AreaDesignConfig::default()).unwrap();
    let lam = Design::from_dataset(&base).lambdas(&AREA_BETA).unwrap();
    let mut rng = RngStream::new(5, 0, 0);
    let y: Vec<u64> = lam.iter().map(|&l| sample_poisson(&mut rng, l).unwrap()).collect();
    let data = base.with_counts(&y);
    let fit = fit_area_model(&data, &FitOptions::default()).unwrap();
    assert!(fit.boundary || fit.params.delta >= 1e5, "delta = {}", fit.params.delta);
    if fit.boundary {
        assert_eq!(fit.params.delta, 1e6);
        let strict = fit_area_model(&data, &FitOptions { strict_dispersion: true, ..Default::default() });
        assert_eq!(strict.unwrap_err(), AreaError::DegenerateDispersion);
    }
}

#[test]
fn profile_grid_is_reported_on_request() {
    let data = case_study_replicate(3);
    let fit = fit_area_model(&data, &FitOptions { keep_profile: true, ..Default::default() }).unwrap();
    let grid = fit.profile_alpha_grid.unwrap();
    assert_eq!(grid.len(), 31);
    let best = grid.iter().map(|g| g.1).fold(f64::NEG_INFINITY, f64::max);
    assert!(fit.loglik >= best - 1e-9);
}

#[test]
fn bp_matches_conditional_expectation_quadrature() {
    for &(y, b0, delta) in &[(0u64, 1.0, 0.4), (3, 0.5, 2.48), (17, 2.0, 1.0), (80, 4.4, 30.0), (1, -1.0, 0.1)] {
        let data = dataset(&[(y, vec![1.0]), (0, vec![1.0])]);
        let params = ModelParams::new(vec![b0], delta).unwrap();
        let lam = lambda(&params, &[1.0]);
        let a = y as f64 + delta;
        let b = lam + delta;
        let t0 = (a / b).ln();
        let peak = a * t0 - a;
        let lo = t0 - 45.0 / a.min(1.0) - 45.0 / a.sqrt();
        let hi = t0 + 6.0 + 12.0 / a.sqrt();
        let num = integrate_panels(&|t: f64| (t + a * t - b * t.exp() - peak).exp(), lo, hi, 400, 20);
        let den = integrate_panels(&|t: f64| (a * t - b * t.exp() - peak).exp(), lo, hi, 400, 20);
        let oracle = lam * num / den;
        let got = area_bp(&params, &data.areas[0]);
        assert!(rel_err(got, oracle, 1e-300) < 1e-8, "{got} vs {oracle}");
    }
}

#[test]
fn bp_gradient_matches_finite_differences() {
    let mut rng = RngStream::new(15, 0, 0);
    for _ in 0..50 {
        let (data, params) = random_instance(&mut rng, 3, 3);
        let rec = &data.areas[0];
        let mut theta = params.beta.clone();
        theta.push(params.delta);
        let p = params.beta.len();
        let fd = gradient(&|t: &[f64]| area_bp(&ModelParams::new(t[..p].to_vec(), t[p]).unwrap(), rec), &theta, 1e-6);
        let g = bp_gradient(&params, rec);
        let scale = area_bp(&params, rec).max(1e-3);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6 * scale.max(b.abs()), "{g:?} vs {fd:?}");
        }
    }
}

#[test]
fn g1_matches_monte_carlo() {
    let cases = [(0.5, 0.2), (1.0, 1.0), (2.0, 2.48), (5.0, 0.5), (8.0, 10.0), (20.0, 2.48), (50.0, 50.0), (100.0, 5.0), (3.0, 0.1), (40.0, 1.0)];
    let n = 1_000_000;
    for (i, &(lam, delta)) in cases.iter().enumerate() {
        let params = ModelParams::new(vec![f64::ln(lam)], delta).unwrap();
        let rec = AreaRecord { area_id: "a".into(), y: 0, x: vec![1.0], population: 100 };
        let g1 = area_g1(&params, &rec);
        let mut rng = RngStream::new(16, i as u64, 0);
        let (mut s, mut s2) = (0.0, 0.0);
        let l = lambda(&params, &[1.0]);
        for _ in 0..n {
            let w = sample_gamma(&mut rng, delta, delta).unwrap();
            let y = sample_poisson(&mut rng, l * w).unwrap();
            let e = l * (y as f64 + delta) / (l + delta) - l * w;
            s += e * e;
            s2 += e * e * e * e;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - g1).abs() < 3.0 * se, "(λ={lam}, δ={delta}): MC {mean} ± {se}, g1 {g1}");
    }
}

#[test]
fn g1_vanishes_for_huge_delta_and_mse_needs_matching_vcov() {
    let data = dataset(&[(4, vec![1.0, 0.2]), (9, vec![1.0, 0.9])]);
    let params = ModelParams::new(vec![1.5, 0.3], 1e13).unwrap();
    assert!(area_g1(&params, &data.areas[0]) < 1e-10);
    let bad = DMatrix::<f64>::identity(2, 2);
    assert!(matches!(area_mse_plugin(&params, &data, &bad), Err(AreaError::DimensionMismatch(_))));
}

proptest! {
    #[test]
    fn bp_is_increasing_in_count(b0 in -2.0f64..6.0, delta in 0.05f64..100.0, y in 0u64..10_000) {
        let params = ModelParams::new(vec![b0], delta).unwrap();
        let lo = AreaRecord { area_id: "a".into(), y, x: vec![1.0], population: 1 };
        let hi = AreaRecord { y: y + 1, ..lo.clone() };
        prop_assert!(area_bp(&params, &hi) > area_bp(&params, &lo));
    }

    #[test]
    fn plugin_mse_dominates_g1(
        b in prop::collection::vec(-1.0f64..1.0, 2),
        delta in 0.05f64..100.0,
        a in prop::collection::vec(-1.0f64..1.0, 9),
        y in prop::collection::vec(0u64..500, 3),
    ) {
        let data = dataset(&[(y[0], vec![1.0, 0.3]), (y[1], vec![1.0, -0.5]), (y[2], vec![1.0, 1.5])]);
        let params = ModelParams::new(vec![2.0 + b[0], b[1]], delta).unwrap();
        let m = DMatrix::from_row_slice(3, 3, &a);
        let vcov = &m * m.transpose() * 0.01;
        let mse = area_mse_plugin(&params, &data, &vcov).unwrap();
        for (r, v) in data.areas.iter().zip(&mse) {
            let g1 = area_g1(&params, r);
            prop_assert!(g1 >= 0.0);
            prop_assert!(*v >= g1);
        }
    }
}
