//! Maximum likelihood for the unit-level model on the AGQ likelihood.
//!
//! Newton steps use the Louis information, regularized towards a scaled
//! identity when it is not positive definite, with step halving on the AGQ
//! log-likelihood. δ is kept in [0, ∞) by projection; at δ = 0 with a
//! non-positive δ-score the boundary is held and β alone is updated.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{derivatives_cells, loglik_cells, AgqConfig, Cells, LogitParams, UnitError, UnitNonConvergence};
use crate::data::UnitDataset;
use crate::numerics::linalg::solve_spd;
use crate::numerics::special::logistic;

const START_DELTA: f64 = 0.5;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitFitOptions {
    pub score_tol: f64,
    pub loglik_rel_tol: f64,
    pub max_iter: usize,
    pub start_delta: f64,
}

impl Default for UnitFitOptions {
    fn default() -> Self {
        Self { score_tol: 1e-6, loglik_rel_tol: 1e-10, max_iter: 200, start_delta: START_DELTA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitFitResult {
    pub params: LogitParams,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub score_max_norm: f64,
    /// δ̂ = 0.
    pub boundary: bool,
}

/// IRLS for the fixed-effects logistic model on pooled cells.
pub fn logistic_cells(cells: &Cells) -> Result<Vec<f64>, UnitError> {
    let p = cells.p;
    let l = cells.classes.len();
    let mut s = vec![0.0; l];
    let mut m = vec![0.0; l];
    for a in &cells.areas {
        for &(c, sc, mc) in &a.cells {
            s[c] += sc;
            m[c] += mc;
        }
    }
    let mut beta = vec![0.0; p];
    for _ in 0..100 {
        let eta = cells.class_eta(&beta);
        let mut g = DVector::<f64>::zeros(p);
        let mut h = DMatrix::<f64>::zeros(p, p);
        for c in 0..l {
            if m[c] == 0.0 {
                continue;
            }
            let pr = logistic(eta[c]);
            let z = &cells.classes[c];
            let v = m[c] * pr * (1.0 - pr);
            for a in 0..p {
                g[a] += (s[c] - m[c] * pr) * z[a];
                for b in 0..p {
                    h[(a, b)] += v * z[a] * z[b];
                }
            }
        }
        let step = solve_spd(&h, &g).map_err(|_| UnitError::SingularMatrix)?;
        for (b, d) in beta.iter_mut().zip(step.iter()) {
            *b += d;
        }
        if step.amax() < 1e-12 || g.amax() < 1e-10 {
            return Ok(beta);
        }
    }
    Ok(beta)
}

/// Logistic regression of the unit outcomes ignoring the area effect.
pub fn logistic_regression(data: &UnitDataset) -> Result<Vec<f64>, UnitError> {
    logistic_cells(&Cells::from_dataset(data))
}

pub fn fit_unit_model(data: &UnitDataset, cfg: &AgqConfig) -> Result<UnitFitResult, UnitError> {
    fit_cells(&Cells::from_dataset(data), cfg, &UnitFitOptions::default())
}

fn max_free(score: &[f64], free: &[bool]) -> f64 {
    score.iter().zip(free).filter(|(_, f)| **f).fold(0.0, |m, (v, _)| m.max(v.abs()))
}

/// Newton direction on the free coordinates with Levenberg damping.
fn direction(info: &DMatrix<f64>, score: &[f64], free: &[bool]) -> Option<Vec<f64>> {
    let idx: Vec<usize> = (0..score.len()).filter(|&i| free[i]).collect();
    let n = idx.len();
    let a = DMatrix::from_fn(n, n, |i, j| info[(idx[i], idx[j])]);
    let g = DVector::from_fn(n, |i, _| score[idx[i]]);
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(1e-8, f64::max);
    let mut mu = 0.0;
    for _ in 0..30 {
        let damped = &a + DMatrix::<f64>::identity(n, n) * (mu * scale);
        if let Ok(x) = solve_spd(&damped, &g) {
            let mut out = vec![0.0; score.len()];
            for (i, &k) in idx.iter().enumerate() {
                out[k] = x[i];
            }
            return Some(out);
        }
        mu = if mu == 0.0 { 1e-6 } else { mu * 10.0 };
    }
    None
}

pub fn fit_cells(cells: &Cells, cfg: &AgqConfig, opts: &UnitFitOptions) -> Result<UnitFitResult, UnitError> {
    let rule = cfg.rule()?;
    let p = cells.p;
    let beta = logistic_cells(cells)?;
    let mut theta = beta;
    theta.push(opts.start_delta.max(0.0));
    let params = |t: &[f64]| LogitParams { beta: t[..p].to_vec(), delta: t[p] };
    let mut cur = derivatives_cells(cells, &params(&theta), &rule)?;
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;
    loop {
        if theta[p] == 0.0 && cur.information[(p, p)] < 0.0 && iterations < opts.max_iter {
            // the likelihood is even in δ, so its δ-score vanishes at 0; a
            // negative curvature there means 0 is a minimum along δ
            let mut cand = theta.clone();
            cand[p] = (-cur.information[(p, p)] / cur.information.diagonal().amax().max(1.0)).sqrt().clamp(1e-3, 1.0);
            let mut kicked = None;
            while cand[p] >= 1e-3 {
                let next = derivatives_cells(cells, &params(&cand), &rule)?;
                if next.loglik > cur.loglik {
                    kicked = Some(next);
                    break;
                }
                cand[p] *= 0.5;
            }
            if let Some(next) = kicked {
                iterations += 1;
                last_change = f64::INFINITY;
                theta = cand;
                cur = next;
                continue;
            }
        }
        let at_boundary = theta[p] == 0.0 && cur.score[p] <= 0.0;
        let mut free = vec![true; p + 1];
        free[p] = !at_boundary;
        let smax = max_free(&cur.score, &free);
        if smax <= opts.score_tol && last_change <= opts.loglik_rel_tol {
            return Ok(UnitFitResult {
                params: params(&theta),
                loglik: cur.loglik,
                iterations,
                converged: true,
                score_max_norm: smax,
                boundary: theta[p] == 0.0,
            });
        }
        let fail = |it, theta: &[f64], ll, s| {
            UnitError::NonConvergence(Box::new(UnitNonConvergence {
                iterations: it,
                params: params(theta),
                loglik: ll,
                score_max_norm: s,
            }))
        };
        if iterations >= opts.max_iter {
            return Err(fail(iterations, &theta, cur.loglik, smax));
        }
        iterations += 1;
        let dir = direction(&cur.information, &cur.score, &free).ok_or(UnitError::SingularMatrix)?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut cand: Vec<f64> = theta.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            cand[p] = cand[p].max(0.0);
            if let Ok(ll) = loglik_cells(cells, &params(&cand), &rule) {
                if ll >= cur.loglik - 1e-12 * cur.loglik.abs() {
                    accepted = Some(cand);
                    break;
                }
            }
            t *= 0.5;
        }
        let Some(cand) = accepted else {
            // the AGQ score is not the exact gradient of the AGQ value; a
            // step that cannot improve means we are at the numerical optimum
            if smax <= opts.score_tol {
                return Ok(UnitFitResult {
                    params: params(&theta),
                    loglik: cur.loglik,
                    iterations,
                    converged: true,
                    score_max_norm: smax,
                    boundary: theta[p] == 0.0,
                });
            }
            return Err(fail(iterations, &theta, cur.loglik, smax));
        };
        let next = derivatives_cells(cells, &params(&cand), &rule)?;
        last_change = (next.loglik - cur.loglik).abs() / cur.loglik.abs().max(1.0);
        theta = cand;
        cur = next;
    }
}
