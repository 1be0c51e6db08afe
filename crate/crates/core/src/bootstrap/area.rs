use rayon::prelude::*;

use super::{collect_replicates, vcov_of, BootError, BootstrapConfig, BootstrapEnsemble, ModelKind, Replicate};
use crate::area::predict::{bp_value, g1_value, mse_plugin_value};
use crate::area::{draw_counts, fit_counts, AreaError, AreaFitResult, Design, FitOptions};
use crate::data::AreaDataset;
use crate::numerics::RngStream;

struct Fitted {
    theta: Vec<f64>,
    lambdas: Vec<f64>,
    delta: f64,
    ebp: Vec<f64>,
}

fn refit(design: &Design, y: &[u64], opts: &FitOptions) -> Result<Fitted, AreaError> {
    let fit = fit_counts(design, y, opts)?;
    let lambdas = design.lambdas(&fit.params.beta)?;
    let delta = fit.params.delta;
    let ebp = lambdas.iter().zip(y).map(|(&l, &yv)| bp_value(l, delta, yv as f64)).collect();
    let mut theta = fit.params.beta;
    theta.push(delta);
    Ok(Fitted { theta, lambdas, delta, ebp })
}

fn replicate(
    design: &Design,
    lambdas: &[f64],
    delta: f64,
    opts: &FitOptions,
    cfg: &BootstrapConfig,
    b: usize,
) -> Result<Replicate, AreaError> {
    let mut rng = RngStream::new(cfg.seed, b as u64 + 1, 0);
    let (truth, y) = draw_counts(lambdas, delta, &mut rng)?;
    let star = refit(design, &y, opts)?;
    let g1 = star.lambdas.iter().map(|&l| g1_value(l, star.delta)).collect();
    let inner_mse = if cfg.b2 > 0 {
        let mut acc = vec![0.0; design.d];
        for b2 in 0..cfg.b2 {
            let mut rng = RngStream::new(cfg.seed, b as u64 + 1, b2 as u64 + 1);
            let (mu2, y2) = draw_counts(&star.lambdas, star.delta, &mut rng)?;
            let inner = refit(design, &y2, opts)?;
            for ((a, e), m) in acc.iter_mut().zip(&inner.ebp).zip(&mu2) {
                *a += (e - m).powi(2) / cfg.b2 as f64;
            }
        }
        Some(acc)
    } else {
        None
    };
    Ok(Replicate { index: b, theta: star.theta, truth, ebp: star.ebp, g1: Some(g1), plugin: None, inner_mse })
}

/// Parametric bootstrap of the area-level model around a fitted θ̂.
pub fn bootstrap_area(
    data: &AreaDataset,
    fit: &AreaFitResult,
    opts: &FitOptions,
    cfg: &BootstrapConfig,
) -> Result<BootstrapEnsemble, BootError> {
    cfg.validate()?;
    fit.params.validate()?;
    let design = Design::from_dataset(data);
    if fit.params.beta.len() != design.p {
        return Err(BootError::DimensionMismatch(format!("beta has {} entries, design has p = {}", fit.params.beta.len(), design.p)));
    }
    let opts = FitOptions { strict_dispersion: false, keep_profile: false, ..opts.clone() };
    let lambdas = design.lambdas(&fit.params.beta)?;
    let delta = fit.params.delta;
    let y = crate::area::counts(data);
    let ebp: Vec<f64> = lambdas.iter().zip(&y).map(|(&l, &yv)| bp_value(l, delta, yv as f64)).collect();
    let g1: Vec<f64> = lambdas.iter().map(|&l| g1_value(l, delta)).collect();

    let results: Vec<Result<Replicate, AreaError>> =
        (0..cfg.b1).into_par_iter().map(|b| replicate(&design, &lambdas, delta, &opts, cfg, b)).collect();
    let (mut replicates, failures) = collect_replicates(results, cfg)?;

    let thetas: Vec<&[f64]> = replicates.iter().map(|r| r.theta.as_slice()).collect();
    let vcov = vcov_of(&thetas);
    let mse_plugin: Vec<f64> = (0..design.d).map(|i| mse_plugin_value(design.row(i), lambdas[i], delta, &vcov)).collect();
    for r in replicates.iter_mut() {
        let (beta, d) = r.theta.split_at(design.p);
        let lam = design.lambdas(beta)?;
        r.plugin = Some((0..design.d).map(|i| mse_plugin_value(design.row(i), lam[i], d[0], &vcov)).collect());
    }
    let mut theta_hat = fit.params.beta.clone();
    theta_hat.push(delta);
    Ok(BootstrapEnsemble {
        model: ModelKind::Area,
        area_ids: data.areas.iter().map(|a| a.area_id.clone()).collect(),
        populations: data.populations(),
        theta_hat,
        ebp,
        g1: Some(g1),
        mse_plugin: Some(mse_plugin),
        replicates,
        failures,
        b1: cfg.b1,
        b2: cfg.b2,
        seed: cfg.seed,
        vcov_theta: vcov,
    })
}
