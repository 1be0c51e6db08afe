use rayon::prelude::*;

use super::{collect_replicates, vcov_of, BootError, BootstrapConfig, BootstrapEnsemble, ModelKind, Replicate};
use crate::data::UnitDataset;
use crate::numerics::{derive_seed, RngStream};
use crate::unit::ebp::ebp_cells;
use crate::unit::fit::fit_cells;
use crate::unit::{draw_unit_outcomes, AgqConfig, Cells, LogitParams, UnitError, UnitFitOptions, UnitFitResult};

struct Ctx<'a> {
    data: &'a UnitDataset,
    agq: &'a AgqConfig,
    opts: UnitFitOptions,
    cfg: &'a BootstrapConfig,
}

impl Ctx<'_> {
    /// Draws from `params`, refits and predicts; returns (θ̂*, μ*, μ̂*).
    fn step(&self, params: &LogitParams, rng: &mut RngStream, mc_seed: u64) -> Result<(LogitParams, Vec<f64>, Vec<f64>), UnitError> {
        let draw = draw_unit_outcomes(self.data, params, rng)?;
        let cells = Cells::with_outcomes(self.data, draw.y.iter().copied());
        let fit = fit_cells(&cells, self.agq, &self.opts)?;
        let agq = AgqConfig { mc_seed, ..self.agq.clone() };
        let pred = ebp_cells(&cells, &self.data.area_ids, &self.data.class_sizes, &fit.params, &agq)?;
        Ok((fit.params, draw.mu, pred.iter().map(|p| p.mu_hat).collect()))
    }

    fn replicate(&self, params: &LogitParams, b: usize) -> Result<Replicate, UnitError> {
        let key = b as u64 + 1;
        let mut rng = RngStream::new(self.cfg.seed, key, 0);
        let rep_seed = derive_seed(self.cfg.seed, key);
        let (star, truth, ebp) = self.step(params, &mut rng, derive_seed(rep_seed, 0))?;
        let inner_mse = if self.cfg.b2 > 0 {
            let mut acc = vec![0.0; truth.len()];
            for b2 in 0..self.cfg.b2 {
                let mut rng = RngStream::new(self.cfg.seed, key, b2 as u64 + 1);
                let (_, mu2, e2) = self.step(&star, &mut rng, derive_seed(rep_seed, b2 as u64 + 1))?;
                for ((a, e), m) in acc.iter_mut().zip(&e2).zip(&mu2) {
                    *a += (e - m).powi(2) / self.cfg.b2 as f64;
                }
            }
            Some(acc)
        } else {
            None
        };
        let mut theta = star.beta;
        theta.push(star.delta);
        Ok(Replicate { index: b, theta, truth, ebp, g1: None, plugin: None, inner_mse })
    }
}

/// Parametric bootstrap of the unit-level model around a fitted θ̂. Original
/// predictions use `agq.mc_seed`; replicate predictions use seeds derived
/// from `cfg.seed`.
pub fn bootstrap_unit(
    data: &UnitDataset,
    fit: &UnitFitResult,
    agq: &AgqConfig,
    cfg: &BootstrapConfig,
) -> Result<BootstrapEnsemble, BootError> {
    cfg.validate()?;
    agq.validate()?;
    fit.params.validate()?;
    if fit.params.beta.len() != data.p() {
        return Err(BootError::DimensionMismatch(format!("beta has {} entries, design has p = {}", fit.params.beta.len(), data.p())));
    }
    let cells = Cells::from_dataset(data);
    let pred = ebp_cells(&cells, &data.area_ids, &data.class_sizes, &fit.params, agq)?;
    let ctx = Ctx { data, agq, opts: UnitFitOptions::default(), cfg };
    let results: Vec<Result<Replicate, UnitError>> =
        (0..cfg.b1).into_par_iter().map(|b| ctx.replicate(&fit.params, b)).collect();
    let (replicates, failures) = collect_replicates(results, cfg)?;
    let thetas: Vec<&[f64]> = replicates.iter().map(|r| r.theta.as_slice()).collect();
    let vcov = vcov_of(&thetas);
    let mut theta_hat = fit.params.beta.clone();
    theta_hat.push(fit.params.delta);
    Ok(BootstrapEnsemble {
        model: ModelKind::Unit,
        area_ids: data.area_ids.clone(),
        populations: data.populations(),
        theta_hat,
        ebp: pred.iter().map(|p| p.mu_hat).collect(),
        g1: None,
        mse_plugin: None,
        replicates,
        failures,
        b1: cfg.b1,
        b2: cfg.b2,
        seed: cfg.seed,
        vcov_theta: vcov,
    })
}
