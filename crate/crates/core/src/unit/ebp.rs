//! Empirical best predictors of class probabilities and area totals.
//!
//! r̃_dl = A_dl / C_d and ũ_d = A^u_d / C_d are posterior expectations under
//! u_d | y_d. They are estimated by Monte Carlo with antithetic pairs
//! (u, −u) drawn from N(0, 1) and weighted by the conditional likelihood;
//! each area owns a stream keyed by (seed, area) so results do not depend on
//! evaluation order or thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{area_nodes, AgqConfig, Cells, LogitParams, UnitError};
use crate::data::UnitDataset;
use crate::numerics::special::{log1p_exp, logistic};
use crate::numerics::{gauss_hermite, sample_normal, RngStream};

const STAGE_EBP: u64 = 0xEB9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitPrediction {
    pub area_id: String,
    /// r̂_dl for every class l.
    pub class_probs: Vec<f64>,
    /// Monte Carlo standard errors of `class_probs`.
    pub class_se: Vec<f64>,
    /// μ̂_d = Σ_l N_dl r̂_dl.
    pub mu_hat: f64,
    /// μ̂_d / N_d.
    pub prop_hat: f64,
    pub prop_se: f64,
    /// Predicted random effect ũ_d.
    pub u_hat: f64,
}

fn finish(area_id: &str, sizes: &[u64], probs: Vec<f64>, se: Vec<f64>, prop_se: f64, u_hat: f64) -> UnitPrediction {
    let n: u64 = sizes.iter().sum();
    let mu: f64 = sizes.iter().zip(&probs).map(|(&k, r)| k as f64 * r).sum();
    UnitPrediction {
        area_id: area_id.to_string(),
        class_probs: probs,
        class_se: se,
        mu_hat: mu,
        prop_hat: mu / n as f64,
        prop_se,
        u_hat,
    }
}

fn check(cells: &Cells, params: &LogitParams, sizes: &[Vec<u64>]) -> Result<(), UnitError> {
    params.validate()?;
    if params.beta.len() != cells.p {
        return Err(UnitError::DimensionMismatch(format!("beta has {} entries, design has p = {}", params.beta.len(), cells.p)));
    }
    if sizes.len() != cells.areas.len() {
        return Err(UnitError::DimensionMismatch(format!("{} class-size rows for {} areas", sizes.len(), cells.areas.len())));
    }
    Ok(())
}

fn mc_area(
    cells: &Cells,
    d: usize,
    eta: &[f64],
    sizes: &[u64],
    delta: f64,
    cfg: &AgqConfig,
) -> Result<(Vec<f64>, Vec<f64>, f64, f64), UnitError> {
    let area = &cells.areas[d];
    let l = cells.classes.len();
    let pairs = cfg.mc_draws.div_ceil(2);
    let mut rng = RngStream::new(cfg.mc_seed, d as u64, STAGE_EBP);
    let mut us = Vec::with_capacity(2 * pairs);
    for _ in 0..pairs {
        let z = sample_normal(&mut rng, 0.0, 1.0).map_err(|e| UnitError::InvalidParams(e.to_string()))?;
        us.push(z);
        us.push(-z);
    }
    let logw: Vec<f64> = us
        .iter()
        .map(|&u| {
            let mut v = delta * area.successes * u;
            for &(c, _, m) in &area.cells {
                v -= m * log1p_exp(eta[c] + delta * u);
            }
            v
        })
        .collect();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(UnitError::DegenerateWeights { area: d });
    }
    let w: Vec<f64> = logw.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(UnitError::DegenerateWeights { area: d });
    }
    let n_d: f64 = sizes.iter().map(|&k| k as f64).sum();
    let mut a = vec![0.0; l];
    let mut au = 0.0;
    let mut pair_a = vec![vec![0.0; l]; pairs];
    let mut pair_prop = vec![0.0; pairs];
    let mut pair_c = vec![0.0; pairs];
    for (s, (&u, &ws)) in us.iter().zip(&w).enumerate() {
        let k = s / 2;
        pair_c[k] += ws;
        au += ws * u;
        for c in 0..l {
            let pr = logistic(eta[c] + delta * u);
            a[c] += ws * pr;
            pair_a[k][c] += ws * pr;
            pair_prop[k] += ws * pr * sizes[c] as f64 / n_d;
        }
    }
    let probs: Vec<f64> = a.iter().map(|v| v / total).collect();
    let ratio_se = |num: &dyn Fn(usize) -> f64, r: f64| {
        let ss: f64 = (0..pairs).map(|k| (num(k) - r * pair_c[k]).powi(2)).sum();
        ss.sqrt() / total
    };
    let se: Vec<f64> = (0..l).map(|c| ratio_se(&|k| pair_a[k][c], probs[c])).collect();
    let prop: f64 = probs.iter().zip(sizes).map(|(r, &k)| r * k as f64).sum::<f64>() / n_d;
    let prop_se = ratio_se(&|k| pair_prop[k], prop);
    Ok((probs, se, prop_se, au / total))
}

/// Monte Carlo EBP on pooled cells, for areas named `ids` with population
/// class sizes `sizes`.
pub fn ebp_cells(
    cells: &Cells,
    ids: &[String],
    sizes: &[Vec<u64>],
    params: &LogitParams,
    cfg: &AgqConfig,
) -> Result<Vec<UnitPrediction>, UnitError> {
    cfg.validate()?;
    check(cells, params, sizes)?;
    let eta = cells.class_eta(&params.beta);
    if params.delta == 0.0 {
        let probs: Vec<f64> = eta.iter().map(|&e| logistic(e)).collect();
        let zeros = vec![0.0; probs.len()];
        return Ok((0..cells.areas.len()).map(|d| finish(&ids[d], &sizes[d], probs.clone(), zeros.clone(), 0.0, 0.0)).collect());
    }
    (0..cells.areas.len())
        .into_par_iter()
        .map(|d| {
            let (probs, se, prop_se, u) = mc_area(cells, d, &eta, &sizes[d], params.delta, cfg)?;
            Ok(finish(&ids[d], &sizes[d], probs, se, prop_se, u))
        })
        .collect()
}

pub fn unit_ebp(data: &UnitDataset, params: &LogitParams, cfg: &AgqConfig) -> Result<Vec<UnitPrediction>, UnitError> {
    ebp_cells(&Cells::from_dataset(data), &data.area_ids, &data.class_sizes, params, cfg)
}

/// Same posterior expectations by adaptive Gauss–Hermite quadrature with
/// `q` nodes; no Monte Carlo error is reported.
pub fn unit_ebp_quadrature(data: &UnitDataset, params: &LogitParams, q: usize) -> Result<Vec<UnitPrediction>, UnitError> {
    let cells = Cells::from_dataset(data);
    check(&cells, params, &data.class_sizes)?;
    let rule = gauss_hermite(q).map_err(|e| UnitError::InvalidConfig(e.to_string()))?;
    let eta = cells.class_eta(&params.beta);
    let l = cells.classes.len();
    (0..cells.areas.len())
        .map(|d| {
            let sizes = &data.class_sizes[d];
            if params.delta == 0.0 {
                let probs = eta.iter().map(|&e| logistic(e)).collect();
                return Ok(finish(&data.area_ids[d], sizes, probs, vec![0.0; l], 0.0, 0.0));
            }
            let nodes = area_nodes(&cells.areas[d], &eta, params.delta, &rule, d)?;
            let mut probs = vec![0.0; l];
            let mut u_hat = 0.0;
            for (&u, &lt) in nodes.nodes.iter().zip(&nodes.log_terms) {
                let w = lt.exp();
                u_hat += w * u;
                for (c, pr) in probs.iter_mut().enumerate() {
                    *pr += w * logistic(eta[c] + params.delta * u);
                }
            }
            Ok(finish(&data.area_ids[d], sizes, probs, vec![0.0; l], 0.0, u_hat))
        })
        .collect()
}
