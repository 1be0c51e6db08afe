use sae_core::area::Design;
use sae_core::bootstrap::{BootstrapConfig, SigmaKind};
use sae_core::sim::design::{AREA_BETA, AREA_DELTA, UNIT_BETA, UNIT_DELTA};
use sae_core::sim::{generate_replicate, run_power, run_study, DMode, DesignSource, Scenario, SimModel, Skeleton};
use sae_core::unit::AgqConfig;
use sae_testkit::integrate_panels;

fn area_scenario(areas: usize, k: usize) -> Scenario {
    Scenario {
        model: SimModel::AreaPoissonGamma,
        beta: AREA_BETA.to_vec(),
        delta: AREA_DELTA,
        design: DesignSource::Generated { areas, seed: 2015, unit: None },
        d_mode: DMode::Original,
        k,
        seed: 42,
        bootstrap: None,
        sigma_kinds: vec![],
        power_deltas: vec![],
        agq: AgqConfig::default(),
        fit: Default::default(),
    }
}

fn with_boot(mut s: Scenario, b1: usize, b2: usize) -> Scenario {
    s.bootstrap = Some(BootstrapConfig { b1, b2, ..Default::default() });
    s
}

fn moments(v: &[f64]) -> (f64, f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    (m, s2, m4)
}

#[test]
fn area_counts_have_negative_binomial_moments() {
    let s = area_scenario(6, 4000);
    let sk = s.skeleton().unwrap();
    let Skeleton::Area(base) = &sk else { unreachable!() };
    let lam = Design::from_dataset(base).lambdas(&AREA_BETA).unwrap();
    let draws: Vec<Vec<f64>> = (0..s.k)
        .map(|k| {
            let Skeleton::Area(d) = generate_replicate(&s, &sk, k).unwrap().data else { unreachable!() };
            d.areas.iter().map(|a| a.y as f64).collect()
        })
        .collect();
    let n = s.k as f64;
    for (a, &l) in lam.iter().enumerate() {
        let y: Vec<f64> = draws.iter().map(|r| r[a]).collect();
        let (m, s2, m4) = moments(&y);
        let var = l + l * l / AREA_DELTA;
        assert!((m - l).abs() < 3.0 * (var / n).sqrt(), "area {a}: mean {m} vs {l}");
        let se = ((m4 - s2 * s2) / n).sqrt();
        assert!((s2 - var).abs() < 3.0 * se, "area {a}: var {s2} vs {var} (se {se})");
    }
}

#[test]
fn huge_delta_gives_poisson_counts() {
    let mut s = area_scenario(4, 3000);
    s.delta = 1e9;
    let sk = s.skeleton().unwrap();
    let Skeleton::Area(base) = &sk else { unreachable!() };
    let lam = Design::from_dataset(base).lambdas(&AREA_BETA).unwrap();
    for (a, &l) in lam.iter().enumerate() {
        let y: Vec<f64> = (0..s.k)
            .map(|k| {
                let Skeleton::Area(d) = generate_replicate(&s, &sk, k).unwrap().data else { unreachable!() };
                d.areas[a].y as f64
            })
            .collect();
        let (_, s2, _) = moments(&y);
        // sd of the sample variance of Poisson(λ) ≈ λ √(2/n)
        assert!((s2 / l - 1.0).abs() < 4.0 * (2.0 / s.k as f64).sqrt(), "{s2} vs {l}");
    }
}

#[test]
fn unit_truth_matches_quadrature_expectation() {
    let s = Scenario {
        model: SimModel::UnitLogit,
        beta: UNIT_BETA.to_vec(),
        delta: UNIT_DELTA,
        design: DesignSource::Generated { areas: 5, seed: 7, unit: None },
        ..area_scenario(5, 3000)
    };
    let sk = s.skeleton().unwrap();
    let Skeleton::Unit(base) = &sk else { unreachable!() };
    let truths: Vec<Vec<f64>> = (0..s.k).map(|k| generate_replicate(&s, &sk, k).unwrap().truth).collect();
    for d in 0..5 {
        let eta: Vec<f64> = base.classes.iter().map(|z| z.iter().zip(&UNIT_BETA).map(|(a, b)| a * b).sum()).collect();
        let total = |u: f64| -> f64 {
            base.class_sizes[d].iter().zip(&eta).map(|(&n, e)| n as f64 / (1.0 + (-(e + UNIT_DELTA * u)).exp())).sum()
        };
        let phi = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mean = integrate_panels(&|u| total(u) * phi(u), -12.0, 12.0, 200, 20);
        let second = integrate_panels(&|u| total(u).powi(2) * phi(u), -12.0, 12.0, 200, 20);
        let sd = (second - mean * mean).sqrt();
        let got = truths.iter().map(|t| t[d]).sum::<f64>() / s.k as f64;
        assert!((got - mean).abs() < 3.0 * sd / (s.k as f64).sqrt(), "area {d}: {got} vs {mean}");
        assert!(truths.iter().all(|t| t[d] > 0.0 && t[d] < base.populations()[d]));
    }
}

#[test]
fn d_modes_select_fixed_areas() {
    let mut s = area_scenario(52, 1);
    s.d_mode = DMode::Half;
    let half = s.skeleton().unwrap();
    assert_eq!(half, s.skeleton().unwrap());
    let ids = half.area_ids();
    assert_eq!(ids.len(), 26);
    let mut uniq = ids.clone();
    uniq.dedup();
    assert_eq!(uniq.len(), 26);

    s.d_mode = DMode::Extended;
    let ext = s.skeleton().unwrap();
    let ids = ext.area_ids();
    assert_eq!(ids.len(), 78);
    assert_eq!(ids.iter().filter(|i| i.ends_with("#2")).count(), 26);
    assert!(ids.iter().all(|i| !i.ends_with("#3")));

    let mut u = Scenario { model: SimModel::UnitLogit, beta: UNIT_BETA.to_vec(), delta: UNIT_DELTA, ..s.clone() };
    u.d_mode = DMode::Extended;
    let Skeleton::Unit(ud) = u.skeleton().unwrap() else { unreachable!() };
    assert_eq!(ud.num_areas(), 78);
    let n = ud.sample_sizes();
    assert!(n.iter().all(|&v| v <= 50));
}

#[test]
fn study_is_identical_across_thread_counts() {
    let s = with_boot(area_scenario(10, 3), 100, 1);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| run_study(&s).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
    assert_eq!(a.runs_csv().unwrap(), b.runs_csv().unwrap());
}

#[test]
fn single_run_reports_flagged_zero_variance() {
    let s = with_boot(area_scenario(8, 1), 100, 1);
    let r = run_study(&s).unwrap().report;
    assert_eq!(r.kinds.len(), 4);
    for k in &r.kinds {
        assert!(k.ecp == 0.0 || k.ecp == 100.0);
        assert_eq!(k.vs, 0.0);
        assert!(k.vs_undefined);
        assert!(k.ws > 0.0);
        assert!(k.sci_contains_ici);
        assert!(k.ecp >= k.ecp_ici);
    }
}

#[test]
fn metrics_recomputed_from_runs() {
    let s = with_boot(area_scenario(8, 6), 100, 0);
    let st = run_study(&s).unwrap();
    let kinds: Vec<SigmaKind> = st.report.kinds.iter().map(|k| k.kind).collect();
    assert_eq!(kinds, vec![SigmaKind::MseBoot, SigmaKind::MsePlugin, SigmaKind::G1]);
    let k = st.runs.len() as f64;
    for (i, ks) in st.report.kinds.iter().enumerate() {
        let covered = st.runs.iter().filter(|r| r.intervals[i].covered).count() as f64;
        assert!((ks.ecp - 100.0 * covered / k).abs() < 1e-12);
        let ws: f64 = st.runs.iter().flat_map(|r| r.intervals[i].widths.iter()).sum::<f64>() / (8.0 * k);
        assert!((ks.ws - ws).abs() < 1e-12);
        let mut vs = 0.0;
        for d in 0..8 {
            let w: Vec<f64> = st.runs.iter().map(|r| r.intervals[i].widths[d]).collect();
            let m = w.iter().sum::<f64>() / k;
            vs += w.iter().map(|x| (x - m).powi(2)).sum::<f64>();
        }
        assert!((ks.vs - vs / (8.0 * (k - 1.0))).abs() < 1e-15);
    }
    let delta = &st.report.params[5];
    let mean = st.runs.iter().map(|r| r.theta_hat[5]).sum::<f64>() / k;
    assert!((delta.rbias - (mean - AREA_DELTA) / AREA_DELTA).abs() < 1e-12);
    let b = st.report.areas.iter().map(|a| a.bias.abs()).sum::<f64>() / 8.0;
    assert!((st.report.b_avg - b).abs() < 1e-15);
    assert!(st.report.sci_table_csv().unwrap().starts_with("D,ecp_B,ecp_P,ecp_G,"));
    assert_eq!(st.report.params_csv().unwrap().lines().count(), 7);
    assert_eq!(st.report.areas_csv().unwrap().lines().count(), 9);
}

#[test]
fn estimation_only_study() {
    let s = area_scenario(26, 20);
    let r = run_study(&s).unwrap().report;
    assert!(r.kinds.is_empty() && r.power.is_empty());
    assert_eq!(r.k_used, 20);
    assert!(r.params.iter().all(|p| p.rrmse.is_finite() && p.rrmse > 0.0));
    assert!(r.e_avg > 0.0);
}

#[test]
fn power_rises_with_shift() {
    let s = with_boot(area_scenario(15, 20), 100, 0);
    let p = run_power(&s, &[0.0, 0.002, 0.05]).unwrap();
    assert_eq!(p.len(), 3);
    assert!(p[0].rate <= p[1].rate && p[1].rate <= p[2].rate);
    assert_eq!(p[2].rate, 1.0);
}

#[test]
fn scenario_json_defaults() {
    let json = r#"{"model":"area-poisson-gamma","beta":[10.038,7.747,-3.136,11.317,-2.466],"delta":2.48,"k":5,"seed":1,
        "bootstrap":{"b1":200,"sigma_kind":"mse-boot"}}"#;
    let s: Scenario = serde_json::from_str(json).unwrap();
    assert_eq!(s.d_mode, DMode::Original);
    assert_eq!(s.design, DesignSource::default());
    let b = s.bootstrap.unwrap();
    assert_eq!((b.b1, b.b2, b.alpha), (200, 1, 0.05));
    assert_eq!(b.sigma_kind, SigmaKind::MseBoot);
    let bad: Scenario = serde_json::from_str(&json.replace("\"k\":5", "\"k\":0")).unwrap();
    assert!(bad.skeleton().is_err());
}
