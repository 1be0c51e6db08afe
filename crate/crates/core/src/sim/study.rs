//! Monte Carlo study: simulate, fit, bootstrap and score the intervals.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{generate_replicate, Scenario, SimModel, Skeleton};
use super::SimError;
use crate::area::fit_area_model;
use crate::area::predict::area_predictions;
use crate::bootstrap::{bonferroni, bootstrap_area, bootstrap_unit, mtp, sci, BootstrapConfig, BootstrapEnsemble, SigmaKind};
use crate::numerics::derive_seed;
use crate::unit::{fit_unit_model, unit_ebp, AgqConfig};

/// Interval outcome of one run for one sigma kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindRun {
    pub kind: SigmaKind,
    pub covered: bool,
    pub ici_covered: bool,
    pub bonferroni_covered: bool,
    pub q_sci: f64,
    /// ω_d = 2qσ̂_d on the proportion scale.
    pub widths: Vec<f64>,
    /// iCI_d ⊆ SCI_d for every area.
    pub sci_contains_ici: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub k: usize,
    pub theta_hat: Vec<f64>,
    pub boundary: bool,
    pub ebp_prop: Vec<f64>,
    pub truth_prop: Vec<f64>,
    pub intervals: Vec<KindRun>,
    /// Max-type test rejections, one per power shift.
    pub rejects: Vec<bool>,
    pub bootstrap_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRun {
    pub k: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub kind: SigmaKind,
    pub label: String,
    /// Joint coverage of the simultaneous intervals, in percent.
    pub ecp: f64,
    pub ecp_se: f64,
    /// Joint coverage of the individual intervals, in percent.
    pub ecp_ici: f64,
    /// Joint coverage of the Bonferroni intervals, in percent.
    pub ecp_bonferroni: f64,
    pub ws: f64,
    pub vs: f64,
    /// Set when K = 1 and VS is reported as 0.
    pub vs_undefined: bool,
    pub sci_contains_ici: bool,
    pub mean_q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub rbias: f64,
    pub rrmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaSummary {
    pub area_id: String,
    /// B_d on the proportion scale.
    pub bias: f64,
    /// E_d on the proportion scale.
    pub mse: f64,
    pub rbias: f64,
    pub rrmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub delta: f64,
    pub rate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub model: SimModel,
    pub d: usize,
    pub k: usize,
    pub k_used: usize,
    pub skipped: Vec<SkippedRun>,
    pub boundary_fits: usize,
    pub alpha: Option<f64>,
    pub b1: Option<usize>,
    pub b2: Option<usize>,
    pub kinds: Vec<KindSummary>,
    pub params: Vec<ParamSummary>,
    pub areas: Vec<AreaSummary>,
    /// B = D⁻¹ Σ |B_d|.
    pub b_avg: f64,
    /// E = D⁻¹ Σ E_d.
    pub e_avg: f64,
    pub power: Vec<PowerPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudy {
    pub report: SimReport,
    pub runs: Vec<RunRecord>,
}

struct Fitted {
    theta: Vec<f64>,
    boundary: bool,
    ebp: Vec<f64>,
    ensemble: Option<BootstrapEnsemble>,
}

fn run_seed(scenario: &Scenario, k: usize) -> u64 {
    derive_seed(scenario.seed, k as u64 + 1)
}

fn fit_and_bootstrap(scenario: &Scenario, data: &Skeleton, k: usize) -> Result<Fitted, SimError> {
    let seed = run_seed(scenario, k);
    let boot = scenario.bootstrap.as_ref().map(|b| BootstrapConfig { seed, ..b.clone() });
    match data {
        Skeleton::Area(d) => {
            let fit = fit_area_model(d, &scenario.fit)?;
            let mut theta = fit.params.beta.clone();
            theta.push(fit.params.delta);
            let ebp = area_predictions(&fit.params, d)?.iter().map(|p| p.mu_hat).collect();
            let ensemble = boot.map(|b| bootstrap_area(d, &fit, &scenario.fit, &b)).transpose()?;
            Ok(Fitted { theta, boundary: fit.boundary, ebp, ensemble })
        }
        Skeleton::Unit(d) => {
            let agq = AgqConfig { mc_seed: derive_seed(seed, 0xEB9), ..scenario.agq.clone() };
            let fit = fit_unit_model(d, &agq)?;
            let mut theta = fit.params.beta.clone();
            theta.push(fit.params.delta);
            let ensemble = boot.map(|b| bootstrap_unit(d, &fit, &agq, &b)).transpose()?;
            let ebp = match &ensemble {
                Some(e) => e.ebp.clone(),
                None => unit_ebp(d, &fit.params, &agq)?.iter().map(|p| p.mu_hat).collect(),
            };
            Ok(Fitted { theta, boundary: fit.boundary, ebp, ensemble })
        }
    }
}

fn all_within(truth: &[f64], iv: &[crate::bootstrap::Interval]) -> bool {
    truth.iter().zip(iv).all(|(t, i)| i.contains(*t))
}

fn run_one(scenario: &Scenario, skeleton: &Skeleton, kinds: &[SigmaKind], k: usize) -> Result<RunRecord, SimError> {
    let draw = generate_replicate(scenario, skeleton, k)?;
    let fitted = fit_and_bootstrap(scenario, &draw.data, k)?;
    let n = skeleton.populations();
    let prop = |v: &[f64]| -> Vec<f64> { v.iter().zip(&n).map(|(a, n)| a / n).collect() };
    let truth_prop = prop(&draw.truth);
    let mut intervals = Vec::new();
    let mut rejects = Vec::new();
    let mut bootstrap_failures = 0;
    if let (Some(ens), Some(base)) = (&fitted.ensemble, &scenario.bootstrap) {
        bootstrap_failures = ens.failures;
        for &kind in kinds {
            let cfg = BootstrapConfig { sigma_kind: kind, ..base.clone() };
            let r = sci(ens, &cfg)?;
            let bonf = bonferroni(ens, &cfg)?;
            let sci_p = r.sci_prop();
            let ici_p = r.ici_prop();
            intervals.push(KindRun {
                kind,
                covered: all_within(&draw.truth, &r.sci),
                ici_covered: all_within(&draw.truth, &r.ici),
                bonferroni_covered: all_within(&draw.truth, &bonf),
                q_sci: r.q_sci,
                widths: sci_p.iter().map(|i| i.width()).collect(),
                sci_contains_ici: sci_p.iter().zip(&ici_p).all(|(s, i)| s.lo <= i.lo && i.hi <= s.hi),
            });
        }
        if !scenario.power_deltas.is_empty() {
            let d = n.len();
            let test = mtp(ens, &DMatrix::identity(d, d), &truth_prop, base.alpha)?;
            rejects = scenario
                .power_deltas
                .iter()
                .map(|delta| {
                    let b: Vec<f64> = truth_prop.iter().map(|t| t + delta).collect();
                    test.reject_for(&b)
                })
                .collect();
        }
    }
    Ok(RunRecord {
        k,
        theta_hat: fitted.theta,
        boundary: fitted.boundary,
        ebp_prop: prop(&fitted.ebp),
        truth_prop,
        intervals,
        rejects,
        bootstrap_failures,
    })
}

/// Runs all K replications in parallel; results do not depend on the
/// number of threads.
pub fn run_study(scenario: &Scenario) -> Result<SimStudy, SimError> {
    let skeleton = scenario.skeleton()?;
    let kinds = if scenario.bootstrap.is_some() { scenario.kinds() } else { Vec::new() };
    let results: Vec<Result<RunRecord, SimError>> =
        (0..scenario.k).into_par_iter().map(|k| run_one(scenario, &skeleton, &kinds, k)).collect();
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => {
                log::warn!("simulation run {} skipped: {e}", k + 1);
                skipped.push(SkippedRun { k, error: e.to_string() });
            }
        }
    }
    if runs.is_empty() {
        return Err(SimError::AllRunsFailed(scenario.k));
    }
    let report = summarize(scenario, &skeleton, &kinds, &runs, skipped);
    Ok(SimStudy { report, runs })
}

pub fn run_reliability(scenario: &Scenario) -> Result<SimReport, SimError> {
    Ok(run_study(scenario)?.report)
}

/// Rejection rate of the max-type test of H₀: ζ = h at each shift, where
/// the truth is h + Δ.
pub fn run_power(scenario: &Scenario, deltas: &[f64]) -> Result<Vec<PowerPoint>, SimError> {
    if scenario.bootstrap.is_none() {
        return Err(SimError::InvalidScenario("power needs a bootstrap configuration".into()));
    }
    let s = Scenario { power_deltas: deltas.to_vec(), ..scenario.clone() };
    Ok(run_study(&s)?.report.power)
}

fn param_names(p: usize) -> Vec<String> {
    let mut v: Vec<String> = (0..p).map(|j| format!("beta{j}")).collect();
    v.push("delta".into());
    v
}

fn percent(hits: usize, k: usize) -> f64 {
    100.0 * hits as f64 / k as f64
}

fn summarize(scenario: &Scenario, skeleton: &Skeleton, kinds: &[SigmaKind], runs: &[RunRecord], skipped: Vec<SkippedRun>) -> SimReport {
    let k = runs.len();
    let kf = k as f64;
    let d = skeleton.num_areas();
    let kind_summaries = kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let rows: Vec<&KindRun> = runs.iter().map(|r| &r.intervals[i]).collect();
            let ecp = percent(rows.iter().filter(|r| r.covered).count(), k);
            let mut ws = 0.0;
            let mut vs = 0.0;
            for a in 0..d {
                let mean = rows.iter().map(|r| r.widths[a]).sum::<f64>() / kf;
                ws += mean / d as f64;
                if k > 1 {
                    vs += rows.iter().map(|r| (r.widths[a] - mean).powi(2)).sum::<f64>() / (d as f64 * (kf - 1.0));
                }
            }
            KindSummary {
                kind,
                label: kind.label().to_string(),
                ecp,
                ecp_se: (ecp * (100.0 - ecp) / kf).sqrt(),
                ecp_ici: percent(rows.iter().filter(|r| r.ici_covered).count(), k),
                ecp_bonferroni: percent(rows.iter().filter(|r| r.bonferroni_covered).count(), k),
                ws,
                vs,
                vs_undefined: k == 1,
                sci_contains_ici: rows.iter().all(|r| r.sci_contains_ici),
                mean_q: rows.iter().map(|r| r.q_sci).sum::<f64>() / kf,
            }
        })
        .collect();

    let mut truth = scenario.beta.clone();
    truth.push(scenario.delta);
    let params = param_names(scenario.beta.len())
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let t = truth[j];
            let mean = runs.iter().map(|r| r.theta_hat[j]).sum::<f64>() / kf;
            let bias = runs.iter().map(|r| r.theta_hat[j] - t).sum::<f64>() / kf;
            let mse = runs.iter().map(|r| (r.theta_hat[j] - t).powi(2)).sum::<f64>() / kf;
            ParamSummary { name, truth: t, mean, rbias: bias / t.abs(), rrmse: mse.sqrt() / t.abs() }
        })
        .collect();

    let ids = skeleton.area_ids();
    let areas: Vec<AreaSummary> = (0..d)
        .map(|a| {
            let bias = runs.iter().map(|r| r.ebp_prop[a] - r.truth_prop[a]).sum::<f64>() / kf;
            let mse = runs.iter().map(|r| (r.ebp_prop[a] - r.truth_prop[a]).powi(2)).sum::<f64>() / kf;
            let zbar = runs.iter().map(|r| r.truth_prop[a]).sum::<f64>() / kf;
            AreaSummary { area_id: ids[a].clone(), bias, mse, rbias: bias / zbar, rrmse: mse.sqrt() / zbar }
        })
        .collect();
    let b_avg = areas.iter().map(|a| a.bias.abs()).sum::<f64>() / d as f64;
    let e_avg = areas.iter().map(|a| a.mse).sum::<f64>() / d as f64;

    let power = if scenario.bootstrap.is_some() {
        scenario
            .power_deltas
            .iter()
            .enumerate()
            .map(|(i, &delta)| {
                let rate = runs.iter().filter(|r| r.rejects[i]).count() as f64 / kf;
                PowerPoint { delta, rate, se: (rate * (1.0 - rate) / kf).sqrt() }
            })
            .collect()
    } else {
        Vec::new()
    };

    let boot = scenario.bootstrap.as_ref();
    SimReport {
        model: scenario.model,
        d,
        k: scenario.k,
        k_used: k,
        skipped,
        boundary_fits: runs.iter().filter(|r| r.boundary).count(),
        alpha: boot.map(|b| b.alpha),
        b1: boot.map(|b| b.b1),
        b2: boot.map(|b| b.b2),
        kinds: kind_summaries,
        params,
        areas,
        b_avg,
        e_avg,
        power,
    }
}

fn csv_string(header: &[String], rows: Vec<Vec<String>>) -> Result<String, SimError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| SimError::Output(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| SimError::Output(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| SimError::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| SimError::Output(e.to_string()))
}

fn s(v: impl ToString) -> String {
    v.to_string()
}

impl SimReport {
    /// One row: D, then ECP, WS and VS for each kind (columns B, BC, P, G).
    pub fn sci_table_csv(&self) -> Result<String, SimError> {
        let mut header = vec![s("D")];
        let mut row = vec![s(self.d)];
        for metric in ["ecp", "ecp_ici", "ws", "vs"] {
            for k in &self.kinds {
                header.push(format!("{metric}_{}", k.label));
                row.push(s(match metric {
                    "ecp" => k.ecp,
                    "ecp_ici" => k.ecp_ici,
                    "ws" => k.ws,
                    _ => k.vs,
                }));
            }
        }
        csv_string(&header, vec![row])
    }

    pub fn params_csv(&self) -> Result<String, SimError> {
        let header = ["parameter", "true", "mean", "rbias", "rrmse"].map(s).to_vec();
        let rows = self.params.iter().map(|p| vec![p.name.clone(), s(p.truth), s(p.mean), s(p.rbias), s(p.rrmse)]).collect();
        csv_string(&header, rows)
    }

    pub fn areas_csv(&self) -> Result<String, SimError> {
        let header = ["area", "B_d", "E_d", "rbias", "rrmse"].map(s).to_vec();
        let rows = self.areas.iter().map(|a| vec![a.area_id.clone(), s(a.bias), s(a.mse), s(a.rbias), s(a.rrmse)]).collect();
        csv_string(&header, rows)
    }

    pub fn power_csv(&self) -> Result<String, SimError> {
        let header = ["delta", "rate", "se"].map(s).to_vec();
        let rows = self.power.iter().map(|p| vec![s(p.delta), s(p.rate), s(p.se)]).collect();
        csv_string(&header, rows)
    }
}

impl SimStudy {
    /// Tidy per-run table: one row per run and sigma kind.
    pub fn runs_csv(&self) -> Result<String, SimError> {
        let header = ["run", "kind", "covered", "ici_covered", "bonferroni_covered", "q", "mean_width"].map(s).to_vec();
        let mut rows = Vec::new();
        for r in &self.runs {
            for kr in &r.intervals {
                let mean = kr.widths.iter().sum::<f64>() / kr.widths.len() as f64;
                rows.push(vec![
                    s(r.k + 1),
                    s(kr.kind.label()),
                    s(kr.covered as u8),
                    s(kr.ici_covered as u8),
                    s(kr.bonferroni_covered as u8),
                    s(kr.q_sci),
                    s(mean),
                ]);
            }
        }
        csv_string(&header, rows)
    }
}
