use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use sae_core::area::{area_predictions, fit_area_model, AreaError, AreaFitResult, FitOptions};
use sae_core::bootstrap::{
    bootstrap_area, bootstrap_unit, mtp, paired_difference_contrast, sci as sci_intervals, BootstrapConfig,
    BootstrapEnsemble, SigmaKind,
};
use sae_core::data::{
    area_dataset_from_direct, direct_estimators, load_area_csv, load_unit_csv, write_area_csv_to, PopulationSource,
};
use sae_core::sim::{run_study, DesignSource, Scenario};
use sae_core::unit::fit::fit_cells;
use sae_core::unit::{unit_ebp, AgqConfig, Cells, UnitError, UnitFitOptions, UnitFitResult};
use sae_core::{AreaDataset, UnitDataset};

use crate::error::CliError;
use crate::output::{csv_table, ConfigHash, OutDir, Provenance};
use crate::{BootArgs, DataArgs, DirectArgs, ModelArg, SciArgs, SimulateArgs, TestArgs};

enum Loaded {
    Area(AreaDataset),
    Unit(UnitDataset),
}

enum Fitted {
    Area(AreaDataset, AreaFitResult, FitOptions),
    Unit(UnitDataset, UnitFitResult, AgqConfig),
}

#[derive(Debug, Serialize)]
struct FitSummary {
    model: &'static str,
    areas: usize,
    covariates: Vec<String>,
    beta: Vec<f64>,
    delta: f64,
    loglik: f64,
    iterations: usize,
    converged: bool,
    boundary: bool,
    score_max_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn model_name(m: ModelArg) -> &'static str {
    match m {
        ModelArg::Area => "area",
        ModelArg::Unit => "unit",
    }
}

fn hash_data(cmd: &str, a: &DataArgs) -> Result<ConfigHash, CliError> {
    let mut h = ConfigHash::new(cmd);
    h.field("model", model_name(a.model)).file("data", &a.data)?;
    if let Some(p) = &a.class_sizes {
        h.file("class_sizes", p)?;
    }
    h.field("seed", a.seed).field("q", a.q).field("mc_draws", a.mc_draws);
    h.field("max_iter", format!("{:?}", a.max_iter));
    Ok(h)
}

fn load(a: &DataArgs) -> Result<Loaded, CliError> {
    match a.model {
        ModelArg::Area => Ok(Loaded::Area(load_area_csv(&a.data)?)),
        ModelArg::Unit => {
            let sizes = a
                .class_sizes
                .as_ref()
                .ok_or_else(|| CliError::Input("the unit model needs --class-sizes".into()))?;
            Ok(Loaded::Unit(load_unit_csv(&a.data, sizes)?))
        }
    }
}

fn covariates(names: &[String]) -> Vec<String> {
    std::iter::once("(intercept)".to_string()).chain(names.iter().cloned()).collect()
}

fn area_summary(data: &AreaDataset, fit: &AreaFitResult) -> FitSummary {
    FitSummary {
        model: "area",
        areas: data.len(),
        covariates: covariates(&data.covariate_names),
        beta: fit.params.beta.clone(),
        delta: fit.params.delta,
        loglik: fit.loglik,
        iterations: fit.iterations,
        converged: fit.converged,
        boundary: fit.boundary,
        score_max_norm: fit.score_max_norm,
        error: None,
    }
}

fn unit_summary(data: &UnitDataset, fit: &UnitFitResult) -> FitSummary {
    FitSummary {
        model: "unit",
        areas: data.num_areas(),
        covariates: covariates(&data.covariate_names),
        beta: fit.params.beta.clone(),
        delta: fit.params.delta,
        loglik: fit.loglik,
        iterations: fit.iterations,
        converged: fit.converged,
        boundary: fit.boundary,
        score_max_norm: fit.score_max_norm,
        error: None,
    }
}

/// Partial diagnostics of a fit that stopped without converging.
fn failed_summary(loaded: &Loaded, err: &CliError) -> Option<FitSummary> {
    let CliError::Core(e) = err else { return None };
    let (model, areas, names) = match loaded {
        Loaded::Area(d) => ("area", d.len(), &d.covariate_names),
        Loaded::Unit(d) => ("unit", d.num_areas(), &d.covariate_names),
    };
    let (beta, delta, loglik, iterations, score) = match e {
        sae_core::Error::Area(AreaError::NonConvergence(nc)) => {
            (nc.params.beta.clone(), nc.params.delta, nc.loglik, nc.iterations, nc.score_max_norm)
        }
        sae_core::Error::Unit(UnitError::NonConvergence(nc)) => {
            (nc.params.beta.clone(), nc.params.delta, nc.loglik, nc.iterations, nc.score_max_norm)
        }
        _ => return None,
    };
    Some(FitSummary {
        model,
        areas,
        covariates: covariates(names),
        beta,
        delta,
        loglik,
        iterations,
        converged: false,
        boundary: false,
        score_max_norm: score,
        error: Some(e.to_string()),
    })
}

fn fit_loaded(loaded: Loaded, a: &DataArgs) -> Result<Fitted, (Loaded, CliError)> {
    match loaded {
        Loaded::Area(data) => {
            let mut opts = FitOptions::default();
            if let Some(m) = a.max_iter {
                opts.max_iter = m;
            }
            match fit_area_model(&data, &opts) {
                Ok(fit) => Ok(Fitted::Area(data, fit, opts)),
                Err(e) => Err((Loaded::Area(data), e.into())),
            }
        }
        Loaded::Unit(data) => {
            let agq = AgqConfig { q: a.q, mc_draws: a.mc_draws, mc_seed: a.seed };
            let mut opts = UnitFitOptions::default();
            if let Some(m) = a.max_iter {
                opts.max_iter = m;
            }
            match fit_cells(&Cells::from_dataset(&data), &agq, &opts) {
                Ok(fit) => Ok(Fitted::Unit(data, fit, agq)),
                Err(e) => Err((Loaded::Unit(data), e.into())),
            }
        }
    }
}

/// Fits and writes fit.json; on non-convergence the partial state is
/// written before the error is returned.
fn fit_and_record(a: &DataArgs, out: &OutDir, prov: &Provenance) -> Result<Fitted, CliError> {
    let loaded = load(a)?;
    match fit_loaded(loaded, a) {
        Ok(f) => {
            let summary = match &f {
                Fitted::Area(d, fit, _) => area_summary(d, fit),
                Fitted::Unit(d, fit, _) => unit_summary(d, fit),
            };
            out.json("fit.json", prov, summary)?;
            Ok(f)
        }
        Err((loaded, e)) => {
            if let Some(s) = failed_summary(&loaded, &e) {
                out.json("fit.json", prov, s)?;
            }
            Err(e)
        }
    }
}

pub fn fit(a: &DataArgs) -> Result<(), CliError> {
    let prov = hash_data("fit", a)?.finish(a.seed);
    let out = OutDir::create(&a.out)?;
    fit_and_record(a, &out, &prov).map(|_| ())
}

fn s(v: impl ToString) -> String {
    v.to_string()
}

pub fn predict(a: &DataArgs) -> Result<(), CliError> {
    let prov = hash_data("predict", a)?.finish(a.seed);
    let out = OutDir::create(&a.out)?;
    let table = match fit_and_record(a, &out, &prov)? {
        Fitted::Area(data, fit, _) => {
            let preds = area_predictions(&fit.params, &data)?;
            let header = ["area", "N", "y", "mu_hat", "prop_hat", "g1"].map(s).to_vec();
            let rows: Vec<Vec<String>> = preds
                .iter()
                .zip(&data.areas)
                .map(|(p, r)| vec![p.area_id.clone(), s(r.population), s(r.y), s(p.mu_hat), s(p.prop_hat), s(p.g1)])
                .collect();
            csv_table(&header, &rows)?
        }
        Fitted::Unit(data, fit, agq) => {
            let preds = unit_ebp(&data, &fit.params, &agq)?;
            let n = data.populations();
            let sizes = data.sample_sizes();
            let header = ["area", "N", "n", "mu_hat", "prop_hat", "prop_se", "u_hat"].map(s).to_vec();
            let rows: Vec<Vec<String>> = preds
                .iter()
                .enumerate()
                .map(|(d, p)| {
                    vec![p.area_id.clone(), s(n[d]), s(sizes[d]), s(p.mu_hat), s(p.prop_hat), s(p.prop_se), s(p.u_hat)]
                })
                .collect();
            csv_table(&header, &rows)?
        }
    };
    out.csv("predictions.csv", &prov, &table)?;
    Ok(())
}

fn boot_config(a: &BootArgs, model: ModelArg, seed: u64, for_test: bool) -> BootstrapConfig {
    let sigma_kind = match (a.sigma, model) {
        (Some(k), _) => k.into(),
        (None, ModelArg::Area) => SigmaKind::G1,
        (None, ModelArg::Unit) => SigmaKind::MseBoot,
    };
    let b2 = a.b2.unwrap_or(if sigma_kind == SigmaKind::MseBootBc && !for_test { 1 } else { 0 });
    BootstrapConfig {
        b1: a.b1,
        b2,
        alpha: a.alpha,
        seed,
        sigma_kind,
        non_studentized: a.non_studentized,
        max_failure_rate: a.max_failure_rate,
    }
}

fn hash_boot(h: &mut ConfigHash, c: &BootstrapConfig) {
    h.field("b1", c.b1).field("b2", c.b2).field("alpha", c.alpha).field("sigma", c.sigma_kind.label());
    h.field("non_studentized", c.non_studentized).field("max_failure_rate", c.max_failure_rate);
}

fn ensemble(f: &Fitted, cfg: &BootstrapConfig) -> Result<BootstrapEnsemble, CliError> {
    cfg.validate()?;
    if let Fitted::Unit(..) = f {
        if matches!(cfg.sigma_kind, SigmaKind::G1 | SigmaKind::MsePlugin) {
            return Err(CliError::Input("the unit model supports only --sigma boot and boot-bc".into()));
        }
    }
    Ok(match f {
        Fitted::Area(d, fit, opts) => bootstrap_area(d, fit, opts, cfg)?,
        Fitted::Unit(d, fit, agq) => bootstrap_unit(d, fit, agq, cfg)?,
    })
}

#[derive(Serialize)]
struct SciSidecar {
    model: &'static str,
    sigma: SigmaKind,
    non_studentized: bool,
    alpha: f64,
    b1: usize,
    b2: usize,
    seed: u64,
    order_index: usize,
    q_sci: f64,
    replicates_used: usize,
    failures: usize,
    theta_hat: Vec<f64>,
}

pub fn sci(a: &SciArgs) -> Result<(), CliError> {
    let cfg = boot_config(&a.boot, a.data.model, a.data.seed, false);
    let mut h = hash_data("sci", &a.data)?;
    hash_boot(&mut h, &cfg);
    let prov = h.finish(a.data.seed);
    let out = OutDir::create(&a.data.out)?;
    let fitted = fit_and_record(&a.data, &out, &prov)?;
    let ens = ensemble(&fitted, &cfg)?;
    let r = sci_intervals(&ens, &cfg)?;

    let header = [
        "area", "N", "ebp", "ebp_prop", "sigma", "ici_lo", "ici_hi", "sci_lo", "sci_hi", "ici_prop_lo", "ici_prop_hi",
        "sci_prop_lo", "sci_prop_hi",
    ]
    .map(s)
    .to_vec();
    let prop = r.prop();
    let (ici_p, sci_p) = (r.ici_prop(), r.sci_prop());
    let rows: Vec<Vec<String>> = (0..r.ebp.len())
        .map(|d| {
            vec![
                r.area_ids[d].clone(),
                s(r.populations[d]),
                s(r.ebp[d]),
                s(prop[d]),
                s(r.sigma[d]),
                s(r.ici[d].lo),
                s(r.ici[d].hi),
                s(r.sci[d].lo),
                s(r.sci[d].hi),
                s(ici_p[d].lo),
                s(ici_p[d].hi),
                s(sci_p[d].lo),
                s(sci_p[d].hi),
            ]
        })
        .collect();
    out.csv("intervals.csv", &prov, &csv_table(&header, &rows)?)?;
    out.json(
        "sci.json",
        &prov,
        SciSidecar {
            model: model_name(a.data.model),
            sigma: cfg.sigma_kind,
            non_studentized: cfg.non_studentized,
            alpha: cfg.alpha,
            b1: cfg.b1,
            b2: cfg.b2,
            seed: cfg.seed,
            order_index: r.order_index,
            q_sci: r.q_sci,
            replicates_used: ens.replicates.len(),
            failures: ens.failures,
            theta_hat: ens.theta_hat.clone(),
        },
    )?;
    Ok(())
}

fn read_numbers(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                    CliError::Input(format!("{}: line {}: `{}` is not a number", path.display(), i + 1, v.trim()))
                })
            })
            .collect::<Result<Vec<f64>, CliError>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn read_contrast(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let rows = read_numbers(path)?;
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Input(format!("{}: contrast rows must be non-empty and of equal length", path.display())));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[derive(Serialize)]
struct ContrastRow {
    index: usize,
    estimate: f64,
    target: f64,
    sigma: f64,
    statistic: f64,
}

#[derive(Serialize)]
struct TestReport {
    model: &'static str,
    contrast: String,
    alpha: f64,
    b1: usize,
    seed: u64,
    order_index: usize,
    t_h: f64,
    q_h: f64,
    reject: bool,
    replicates_used: usize,
    failures: usize,
    contrasts: Vec<ContrastRow>,
}

pub fn test(a: &TestArgs) -> Result<(), CliError> {
    let cfg = boot_config(&a.boot, a.data.model, a.data.seed, true);
    let mut h = hash_data("test", &a.data)?;
    hash_boot(&mut h, &cfg);
    match &a.contrast {
        Some(p) => h.file("contrast", p)?,
        None => h.field("contrast", if a.paired_diff { "paired-diff" } else { "identity" }),
    };
    match &a.target {
        Some(p) => h.file("target", p)?,
        None => h.field("target_value", a.target_value),
    };
    let prov = h.finish(a.data.seed);
    let out = OutDir::create(&a.data.out)?;

    let contrast_rows = a.contrast.as_ref().map(|p| read_contrast(p)).transpose()?;
    let target = a.target.as_ref().map(|p| read_numbers(p)).transpose()?.map(|r| r.concat());
    let fitted = fit_and_record(&a.data, &out, &prov)?;
    let d = match &fitted {
        Fitted::Area(data, ..) => data.len(),
        Fitted::Unit(data, ..) => data.num_areas(),
    };
    let (contrast, label) = match contrast_rows {
        Some(m) => (m, a.contrast.as_ref().unwrap().display().to_string()),
        None if a.paired_diff => (paired_difference_contrast(d)?, "paired-diff".to_string()),
        None => (DMatrix::identity(d, d), "identity".to_string()),
    };
    let b = target.unwrap_or_else(|| vec![a.target_value; contrast.nrows()]);
    let ens = ensemble(&fitted, &cfg)?;
    let r = mtp(&ens, &contrast, &b, cfg.alpha)?;
    let contrasts = (0..r.estimate.len())
        .map(|i| ContrastRow {
            index: i + 1,
            estimate: r.estimate[i],
            target: b[i],
            sigma: r.sigma[i],
            statistic: (r.estimate[i] - b[i]).abs() / r.sigma[i],
        })
        .collect();
    out.json(
        "test.json",
        &prov,
        TestReport {
            model: model_name(a.data.model),
            contrast: label,
            alpha: r.alpha,
            b1: cfg.b1,
            seed: cfg.seed,
            order_index: r.order_index,
            t_h: r.t_h,
            q_h: r.q_h,
            reject: r.reject,
            replicates_used: ens.replicates.len(),
            failures: ens.failures,
            contrasts,
        },
    )?;
    Ok(())
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.scenario).map_err(|e| CliError::io(&a.scenario, e))?;
    let mut scenario: Scenario =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", a.scenario.display())))?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    if let Some(k) = a.k {
        scenario.k = k;
    }
    if a.b1.is_some() || a.b2.is_some() || a.alpha.is_some() {
        let b = scenario.bootstrap.get_or_insert_with(BootstrapConfig::default);
        if let Some(v) = a.b1 {
            b.b1 = v;
        }
        if let Some(v) = a.b2 {
            b.b2 = v;
        }
        if let Some(v) = a.alpha {
            b.alpha = v;
        }
    }
    let mut h = ConfigHash::new("simulate");
    h.field("scenario", serde_json::to_string(&scenario)?);
    match &scenario.design {
        DesignSource::AreaCsv { path } => {
            h.file("design", path)?;
        }
        DesignSource::UnitCsv { units, class_sizes } => {
            h.file("design_units", units)?.file("design_class_sizes", class_sizes)?;
        }
        DesignSource::Generated { .. } => {}
    }
    let prov = h.finish(scenario.seed);
    let out = OutDir::create(&a.out)?;
    let study = run_study(&scenario)?;
    let r = &study.report;
    out.json("report.json", &prov, r)?;
    out.csv("params.csv", &prov, &r.params_csv()?)?;
    out.csv("areas.csv", &prov, &r.areas_csv()?)?;
    if !r.kinds.is_empty() {
        out.csv("sci_table.csv", &prov, &r.sci_table_csv()?)?;
        out.csv("runs.csv", &prov, &study.runs_csv()?)?;
    }
    if !r.power.is_empty() {
        out.csv("power.csv", &prov, &r.power_csv()?)?;
    }
    Ok(())
}

pub fn direct(a: &DirectArgs) -> Result<(), CliError> {
    let mut h = ConfigHash::new("direct");
    h.file("data", &a.data)?.file("class_sizes", &a.class_sizes)?;
    let prov = h.finish(0);
    let out = OutDir::create(&a.out)?;
    let data = load_unit_csv(&a.data, &a.class_sizes)?;
    let est = direct_estimators(&data)?;
    let mut header = ["area", "n", "N_hat", "Y_hat", "prop_hat"].map(s).to_vec();
    header.extend(data.covariate_names.iter().map(|c| format!("mean_{c}")));
    let sizes = data.sample_sizes();
    let rows: Vec<Vec<String>> = est
        .iter()
        .zip(&sizes)
        .map(|(e, n)| {
            let mut row = vec![e.area_id.clone(), s(n), s(e.n_total), s(e.y_total), s(e.y_total / e.n_total)];
            row.extend(e.x_means.iter().map(|v| s(v)));
            row
        })
        .collect();
    out.csv("direct.csv", &prov, &csv_table(&header, &rows)?)?;

    let populations = data.populations().iter().map(|n| n.round() as u64).collect();
    let area = area_dataset_from_direct(&est, data.covariate_names.clone(), &PopulationSource::Supplied(populations))?;
    let mut buf = Vec::new();
    write_area_csv_to(&area, &mut buf)?;
    out.csv("area.csv", &prov, &String::from_utf8_lossy(&buf))?;
    Ok(())
}
