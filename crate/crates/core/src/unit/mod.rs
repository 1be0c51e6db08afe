//! Unit-level mixed logit model: y_dj | u_d ~ Bin(m_dj, p_dj) with
//! logit p_dj = x_djᵗβ + δu_d and u_d ~ N(0, 1).
//!
//! The marginal likelihood of each area is a one-dimensional integral over
//! u_d, approximated by adaptive Gauss–Hermite quadrature centred at the
//! conditional mode. Units sharing a covariate class are pooled, so the
//! per-area cost scales with the number of classes rather than n_d.

pub mod ebp;
pub mod fit;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::UnitDataset;
use crate::numerics::special::{ln_choose, log1p_exp, log_sum_exp, logistic};
use crate::numerics::{gauss_hermite, sample_binomial, sample_normal, GaussHermite};

pub use ebp::{unit_ebp, unit_ebp_quadrature, UnitPrediction};
pub use fit::{fit_unit_model, logistic_regression, UnitFitOptions, UnitFitResult};

const MODE_TOL: f64 = 1e-10;
const MODE_MAX_ITER: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitParams {
    pub beta: Vec<f64>,
    pub delta: f64,
}

impl LogitParams {
    pub fn new(beta: Vec<f64>, delta: f64) -> Result<Self, UnitError> {
        let p = Self { beta, delta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), UnitError> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(UnitError::InvalidParams(format!("delta must be finite and >= 0, got {}", self.delta)));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(UnitError::InvalidParams("beta has non-finite entries".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgqConfig {
    /// Quadrature nodes per area.
    pub q: usize,
    /// Monte Carlo draws for the EBP integrals.
    pub mc_draws: usize,
    /// Master seed of the per-area EBP streams.
    pub mc_seed: u64,
}

impl Default for AgqConfig {
    fn default() -> Self {
        Self { q: 15, mc_draws: 2000, mc_seed: 0 }
    }
}

impl AgqConfig {
    pub fn validate(&self) -> Result<(), UnitError> {
        if self.q < 3 {
            return Err(UnitError::InvalidConfig(format!("q must be at least 3, got {}", self.q)));
        }
        if self.mc_draws < 100 {
            return Err(UnitError::InvalidConfig(format!("mc_draws must be at least 100, got {}", self.mc_draws)));
        }
        Ok(())
    }

    pub(crate) fn rule(&self) -> Result<GaussHermite, UnitError> {
        self.validate()?;
        gauss_hermite(self.q).map_err(|e| UnitError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitNonConvergence {
    pub iterations: usize,
    pub params: LogitParams,
    pub loglik: f64,
    pub score_max_norm: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum UnitError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid quadrature configuration: {0}")]
    InvalidConfig(String),
    #[error("conditional mode search failed in area {area}")]
    ModeSearchFailure { area: usize },
    #[error("non-finite likelihood or score")]
    NonFiniteResult,
    #[error("Monte Carlo weights underflow in area {area}")]
    DegenerateWeights { area: usize },
    #[error("fit did not converge after {} iterations (max |score| = {:.3e})", .0.iterations, .0.score_max_norm)]
    NonConvergence(Box<UnitNonConvergence>),
    #[error("information matrix is singular")]
    SingularMatrix,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Sample units of one area pooled by covariate class.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaCells {
    /// Class index, successes s and trials M per occupied class.
    pub cells: Vec<(usize, f64, f64)>,
    /// Σ_j ln C(m_dj, y_dj).
    pub log_binom: f64,
    /// y_d· = Σ_j y_dj.
    pub successes: f64,
}

/// Pooled view of a unit dataset used by every likelihood routine.
#[derive(Debug, Clone, PartialEq)]
pub struct Cells {
    pub areas: Vec<AreaCells>,
    pub classes: Vec<Vec<f64>>,
    pub p: usize,
}

impl Cells {
    pub fn from_dataset(data: &UnitDataset) -> Self {
        Self::with_outcomes(data, data.units.iter().map(|u| u.y))
    }

    /// Pools the design of `data` with replacement outcomes, in unit order.
    pub fn with_outcomes(data: &UnitDataset, y: impl Iterator<Item = u64>) -> Self {
        let l = data.num_classes();
        let d = data.num_areas();
        let mut s = vec![vec![0.0; l]; d];
        let mut m = vec![vec![0.0; l]; d];
        let mut lb = vec![0.0; d];
        let mut tot = vec![0.0; d];
        for (u, yv) in data.units.iter().zip(y) {
            s[u.area][u.class] += yv as f64;
            m[u.area][u.class] += u.m as f64;
            lb[u.area] += ln_choose(u.m, yv);
            tot[u.area] += yv as f64;
        }
        let areas = (0..d)
            .map(|a| AreaCells {
                cells: (0..l).filter(|&c| m[a][c] > 0.0).map(|c| (c, s[a][c], m[a][c])).collect(),
                log_binom: lb[a],
                successes: tot[a],
            })
            .collect();
        Self { areas, classes: data.classes.clone(), p: data.p() }
    }

    pub fn class_eta(&self, beta: &[f64]) -> Vec<f64> {
        self.classes.iter().map(|z| z.iter().zip(beta).map(|(a, b)| a * b).sum()).collect()
    }
}

/// log g_d(u) + log h(u) without the binomial and 2π constants.
#[inline]
pub(crate) fn log_joint(area: &AreaCells, eta: &[f64], delta: f64, u: f64) -> f64 {
    let mut v = -0.5 * u * u;
    for &(c, s, m) in &area.cells {
        let e = eta[c] + delta * u;
        v += s * e - m * log1p_exp(e);
    }
    v
}

/// Conditional mode û_d and the curvature scale σ̂_d = (−f''(û))^{-1/2}.
pub(crate) fn conditional_mode(area: &AreaCells, eta: &[f64], delta: f64) -> Option<(f64, f64)> {
    let mut u = 0.0;
    let mut f = log_joint(area, eta, delta, u);
    for _ in 0..MODE_MAX_ITER {
        let (mut g, mut h) = (-u, -1.0);
        for &(c, s, m) in &area.cells {
            let p = logistic(eta[c] + delta * u);
            g += delta * (s - m * p);
            h -= delta * delta * m * p * (1.0 - p);
        }
        let step = -g / h;
        if step.abs() < MODE_TOL {
            return Some((u, (-h).sqrt().recip()));
        }
        // near the mode f changes by O(step²), below rounding; take the
        // Newton step as is
        let mut t = 1.0;
        while step.abs() > 1e-4 {
            let cand = u + t * step;
            let fc = log_joint(area, eta, delta, cand);
            if fc >= f || t < 1e-12 {
                break;
            }
            t *= 0.5;
        }
        u += t * step;
        f = log_joint(area, eta, delta, u);
        if !u.is_finite() {
            return None;
        }
    }
    None
}

/// AGQ nodes of one area and their normalized log weights.
pub(crate) struct AreaNodes {
    pub nodes: Vec<f64>,
    pub log_terms: Vec<f64>,
    pub log_f: f64,
}

pub(crate) fn area_nodes(
    area: &AreaCells,
    eta: &[f64],
    delta: f64,
    rule: &GaussHermite,
    index: usize,
) -> Result<AreaNodes, UnitError> {
    let (mode, sigma) = conditional_mode(area, eta, delta).ok_or(UnitError::ModeSearchFailure { area: index })?;
    let scale = sigma * std::f64::consts::SQRT_2;
    let mut nodes = Vec::with_capacity(rule.len());
    let mut log_terms = Vec::with_capacity(rule.len());
    for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
        let node = mode + scale * t;
        nodes.push(node);
        log_terms.push(w.ln() + t * t + log_joint(area, eta, delta, node));
    }
    let lse = log_sum_exp(&log_terms);
    let log_f = -0.5 * std::f64::consts::PI.ln() + sigma.ln() + lse + area.log_binom;
    for v in &mut log_terms {
        *v -= lse;
    }
    Ok(AreaNodes { nodes, log_terms, log_f })
}

/// Area log-likelihood at δ = 0, where the integral is the plain binomial
/// likelihood.
fn area_loglik_fixed(area: &AreaCells, eta: &[f64]) -> f64 {
    area.log_binom + area.cells.iter().map(|&(c, s, m)| s * eta[c] - m * log1p_exp(eta[c])).sum::<f64>()
}

fn check(cells: &Cells, params: &LogitParams) -> Result<(), UnitError> {
    params.validate()?;
    if params.beta.len() != cells.p {
        return Err(UnitError::DimensionMismatch(format!("beta has {} entries, design has p = {}", params.beta.len(), cells.p)));
    }
    Ok(())
}

pub fn loglik_cells(cells: &Cells, params: &LogitParams, rule: &GaussHermite) -> Result<f64, UnitError> {
    check(cells, params)?;
    let eta = cells.class_eta(&params.beta);
    let mut ll = 0.0;
    for (i, area) in cells.areas.iter().enumerate() {
        ll += if params.delta == 0.0 {
            area_loglik_fixed(area, &eta)
        } else {
            area_nodes(area, &eta, params.delta, rule, i)?.log_f
        };
    }
    if ll.is_finite() {
        Ok(ll)
    } else {
        Err(UnitError::NonFiniteResult)
    }
}

/// AGQ log-likelihood, including the binomial coefficients.
pub fn logit_loglik_agq(data: &UnitDataset, params: &LogitParams, cfg: &AgqConfig) -> Result<f64, UnitError> {
    loglik_cells(&Cells::from_dataset(data), params, &cfg.rule()?)
}

/// Log-likelihood, AGQ score and Louis information, all in (β, δ).
#[derive(Debug, Clone, PartialEq)]
pub struct AgqDerivatives {
    pub loglik: f64,
    pub score: Vec<f64>,
    pub information: DMatrix<f64>,
}

/// Score Σ_d Ê[∂ log g_d/∂θ | y_d] and the Louis identity
/// Ê[−∂² log g_d] − V̂ar[∂ log g_d] with expectations under the AGQ
/// posterior weights.
pub fn derivatives_cells(cells: &Cells, params: &LogitParams, rule: &GaussHermite) -> Result<AgqDerivatives, UnitError> {
    check(cells, params)?;
    let p = cells.p;
    let k = p + 1;
    let delta = params.delta;
    let eta = cells.class_eta(&params.beta);
    let mut ll = 0.0;
    let mut score = vec![0.0; k];
    let mut info = DMatrix::<f64>::zeros(k, k);
    let mut sr = vec![0.0; k];
    let mut es = vec![0.0; k];
    let mut ess = vec![0.0; k * k];
    let mut eh = vec![0.0; k * k];
    let mut zt = vec![0.0; k];
    for (i, area) in cells.areas.iter().enumerate() {
        let (nodes, weights, log_f) = if delta == 0.0 {
            // prior N(0,1) is the posterior; two symmetric points carry the
            // first two moments exactly, which is all the derivatives need
            (vec![-1.0, 1.0], vec![0.5, 0.5], area_loglik_fixed(area, &eta))
        } else {
            let n = area_nodes(area, &eta, delta, rule, i)?;
            let w = n.log_terms.iter().map(|v| v.exp()).collect();
            (n.nodes, w, n.log_f)
        };
        ll += log_f;
        es.iter_mut().for_each(|v| *v = 0.0);
        ess.iter_mut().for_each(|v| *v = 0.0);
        eh.iter_mut().for_each(|v| *v = 0.0);
        for (&u, &w) in nodes.iter().zip(&weights) {
            sr.iter_mut().for_each(|v| *v = 0.0);
            for &(c, s, m) in &area.cells {
                let z = &cells.classes[c];
                let pr = logistic(eta[c] + delta * u);
                let r = s - m * pr;
                let v = m * pr * (1.0 - pr);
                zt[..p].copy_from_slice(z);
                zt[p] = u;
                for a in 0..k {
                    sr[a] += r * zt[a];
                    for b in a..k {
                        eh[a * k + b] += w * v * zt[a] * zt[b];
                    }
                }
            }
            for a in 0..k {
                es[a] += w * sr[a];
                for b in a..k {
                    ess[a * k + b] += w * sr[a] * sr[b];
                }
            }
        }
        for a in 0..k {
            score[a] += es[a];
            for b in a..k {
                let v = eh[a * k + b] - (ess[a * k + b] - es[a] * es[b]);
                info[(a, b)] += v;
                if a != b {
                    info[(b, a)] += v;
                }
            }
        }
    }
    if ll.is_finite() && score.iter().all(|v| v.is_finite()) && info.iter().all(|v| v.is_finite()) {
        Ok(AgqDerivatives { loglik: ll, score, information: info })
    } else {
        Err(UnitError::NonFiniteResult)
    }
}

pub fn logit_score_agq(data: &UnitDataset, params: &LogitParams, cfg: &AgqConfig) -> Result<Vec<f64>, UnitError> {
    Ok(derivatives_cells(&Cells::from_dataset(data), params, &cfg.rule()?)?.score)
}

/// Plain logistic log-likelihood of the units, binomial coefficients included.
pub fn logistic_loglik(data: &UnitDataset, beta: &[f64]) -> Result<f64, UnitError> {
    let cells = Cells::from_dataset(data);
    check(&cells, &LogitParams { beta: beta.to_vec(), delta: 0.0 })?;
    let eta = cells.class_eta(beta);
    Ok(cells.areas.iter().map(|a| area_loglik_fixed(a, &eta)).sum())
}

/// One draw from the model for the sampled units plus the area totals
/// μ_d = Σ_l N_dl r_dl(u_d).
#[derive(Debug, Clone, PartialEq)]
pub struct UnitDraw {
    pub u: Vec<f64>,
    pub y: Vec<u64>,
    pub mu: Vec<f64>,
}

pub fn draw_unit_outcomes<R: rand::RngCore + ?Sized>(
    data: &UnitDataset,
    params: &LogitParams,
    rng: &mut R,
) -> Result<UnitDraw, UnitError> {
    params.validate()?;
    let eta: Vec<f64> =
        data.classes.iter().map(|z| z.iter().zip(&params.beta).map(|(a, b)| a * b).sum()).collect();
    let map = |e: crate::NumericsError| UnitError::InvalidParams(e.to_string());
    let mut u = Vec::with_capacity(data.num_areas());
    for _ in 0..data.num_areas() {
        u.push(sample_normal(rng, 0.0, 1.0).map_err(map)?);
    }
    let mut y = Vec::with_capacity(data.units.len());
    for unit in &data.units {
        let pr = logistic(eta[unit.class] + params.delta * u[unit.area]);
        y.push(sample_binomial(rng, unit.m, pr).map_err(map)?);
    }
    let mu = data
        .class_sizes
        .iter()
        .zip(&u)
        .map(|(sizes, &ud)| sizes.iter().zip(&eta).map(|(&n, &e)| n as f64 * logistic(e + params.delta * ud)).sum())
        .collect();
    Ok(UnitDraw { u, y, mu })
}
