//! Area-level Poisson–gamma model: y_d | w_d ~ Poisson(λ_d w_d),
//! w_d ~ Gamma(δ, δ), λ_d = exp(x_dᵗβ). Marginally y_d is negative binomial
//! with mean λ_d and dispersion α = 1/δ.

pub mod fit;
pub mod predict;
pub mod series;
pub mod sums;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::AreaDataset;
use crate::numerics::rng::{sample_gamma, sample_poisson};
use sums::{count_sums, log_minus_ratio, log_minus_ratio2};

pub use fit::{fit_area_model, fit_counts, AreaFitResult, FitAlgorithm, FitOptions};
pub use predict::{
    area_bp, area_g1, area_mse_plugin, area_predictions, bp_gradient, AreaPrediction,
};

/// Largest linear predictor accepted before exp overflows into nonsense.
const MAX_ETA: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: Vec<f64>,
    pub delta: f64,
}

impl ModelParams {
    pub fn new(beta: Vec<f64>, delta: f64) -> Result<Self, AreaError> {
        let p = Self { beta, delta };
        p.validate()?;
        Ok(p)
    }

    pub fn from_alpha(beta: Vec<f64>, alpha: f64) -> Result<Self, AreaError> {
        Self::new(beta, 1.0 / alpha)
    }

    pub fn alpha(&self) -> f64 {
        1.0 / self.delta
    }

    pub fn validate(&self) -> Result<(), AreaError> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(AreaError::InvalidParams(format!("delta must be positive and finite, got {}", self.delta)));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(AreaError::InvalidParams("beta has non-finite entries".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonConvergence {
    pub iterations: usize,
    pub params: ModelParams,
    pub loglik: f64,
    pub score_max_norm: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AreaError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("linear predictor overflow or non-finite likelihood")]
    NonFiniteResult,
    #[error("information matrix is singular")]
    SingularMatrix,
    #[error("fit did not converge after {} iterations (max |score| = {:.3e})", .0.iterations, .0.score_max_norm)]
    NonConvergence(Box<NonConvergence>),
    #[error("profile likelihood is maximized at the zero-dispersion boundary")]
    DegenerateDispersion,
    #[error("need more areas than fixed effects: D = {d}, p = {p}")]
    TooFewAreas { d: usize, p: usize },
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Row-major copy of the covariates, the form every hot loop works on.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub d: usize,
    pub p: usize,
    pub x: Vec<f64>,
}

impl Design {
    pub fn from_dataset(data: &AreaDataset) -> Self {
        let d = data.len();
        let p = data.p();
        let mut x = Vec::with_capacity(d * p);
        for a in &data.areas {
            x.extend_from_slice(&a.x);
        }
        Self { d, p, x }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn eta(&self, i: usize, beta: &[f64]) -> f64 {
        self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    /// λ_d for every area; errors on overflow.
    pub fn lambdas(&self, beta: &[f64]) -> Result<Vec<f64>, AreaError> {
        (0..self.d)
            .map(|i| {
                let e = self.eta(i, beta);
                if e.is_finite() && e <= MAX_ETA {
                    Ok(e.exp())
                } else {
                    Err(AreaError::NonFiniteResult)
                }
            })
            .collect()
    }
}

pub fn counts(data: &AreaDataset) -> Vec<u64> {
    data.areas.iter().map(|a| a.y).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InformationKind {
    Observed,
    Fisher,
}

/// Log-likelihood terms of one area without the count sum L(y).
#[inline]
pub(crate) fn area_kernel(y: f64, eta: f64, lambda: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        y * eta - lambda
    } else {
        y * eta - (y + 1.0 / alpha) * (alpha * lambda).ln_1p()
    }
}

fn check(design: &Design, y: &[u64], params: &ModelParams) -> Result<(), AreaError> {
    params.validate()?;
    if params.beta.len() != design.p {
        return Err(AreaError::DimensionMismatch(format!("beta has {} entries, design has p = {}", params.beta.len(), design.p)));
    }
    if y.len() != design.d {
        return Err(AreaError::DimensionMismatch(format!("{} counts for {} areas", y.len(), design.d)));
    }
    Ok(())
}

pub fn loglik_counts(design: &Design, y: &[u64], params: &ModelParams) -> Result<f64, AreaError> {
    check(design, y, params)?;
    let alpha = params.alpha();
    let lam = design.lambdas(&params.beta)?;
    let mut ll = 0.0;
    for i in 0..design.d {
        let yi = y[i];
        ll += count_sums(yi, alpha, 0).l + area_kernel(yi as f64, lam[i].ln(), lam[i], alpha);
    }
    if ll.is_finite() {
        Ok(ll)
    } else {
        Err(AreaError::NonFiniteResult)
    }
}

/// Log-likelihood, up to the constant −Σ ln y_d!.
pub fn nb_loglik(data: &AreaDataset, params: &ModelParams) -> Result<f64, AreaError> {
    loglik_counts(&Design::from_dataset(data), &counts(data), params)
}

/// Score with respect to (β, α).
pub fn score_counts(design: &Design, y: &[u64], params: &ModelParams) -> Result<Vec<f64>, AreaError> {
    check(design, y, params)?;
    let alpha = params.alpha();
    let lam = design.lambdas(&params.beta)?;
    let p = design.p;
    let mut s = vec![0.0; p + 1];
    for i in 0..design.d {
        let yi = y[i] as f64;
        let l = lam[i];
        let xl = alpha * l;
        let r = (yi - l) / (1.0 + xl);
        for (sk, xk) in s[..p].iter_mut().zip(design.row(i)) {
            *sk += xk * r;
        }
        s[p] += count_sums(y[i], alpha, 1).s1 + log_minus_ratio(xl) / (alpha * alpha) - yi * l / (1.0 + xl);
    }
    if s.iter().all(|v| v.is_finite()) {
        Ok(s)
    } else {
        Err(AreaError::NonFiniteResult)
    }
}

pub fn nb_score(data: &AreaDataset, params: &ModelParams) -> Result<Vec<f64>, AreaError> {
    score_counts(&Design::from_dataset(data), &counts(data), params)
}

pub fn information_counts(
    design: &Design,
    y: &[u64],
    params: &ModelParams,
    kind: InformationKind,
) -> Result<DMatrix<f64>, AreaError> {
    check(design, y, params)?;
    let alpha = params.alpha();
    let lam = design.lambdas(&params.beta)?;
    let p = design.p;
    let mut m = DMatrix::<f64>::zeros(p + 1, p + 1);
    for i in 0..design.d {
        let yi = y[i] as f64;
        let l = lam[i];
        let xl = alpha * l;
        let den = 1.0 + xl;
        let row = design.row(i);
        let (wbb, wba, waa) = match kind {
            InformationKind::Observed => {
                let s2 = count_sums(y[i], alpha, 2).s2;
                (
                    (1.0 + alpha * yi) * l / (den * den),
                    l * (yi - l) / (den * den),
                    s2 + 2.0 * log_minus_ratio2(xl) / (alpha * alpha * alpha) - yi * l * l / (den * den),
                )
            }
            InformationKind::Fisher => {
                let e = series::expected_inverse_square_sum(l, params.delta);
                (l / den, 0.0, (e - alpha * xl / den) / alpha.powi(4))
            }
        };
        for k in 0..p {
            for r in 0..p {
                m[(k, r)] += wbb * row[k] * row[r];
            }
            m[(k, p)] += wba * row[k];
        }
        m[(p, p)] += waa;
    }
    for k in 0..p {
        m[(p, k)] = m[(k, p)];
    }
    if m.iter().all(|v| v.is_finite()) {
        Ok(m)
    } else {
        Err(AreaError::NonFiniteResult)
    }
}

/// Observed (negative Hessian) or expected information in (β, α).
pub fn nb_information(data: &AreaDataset, params: &ModelParams, kind: InformationKind) -> Result<DMatrix<f64>, AreaError> {
    let m = information_counts(&Design::from_dataset(data), &counts(data), params, kind)?;
    if m.clone().try_inverse().is_none_or(|inv| inv.iter().any(|v| !v.is_finite())) {
        return Err(AreaError::SingularMatrix);
    }
    Ok(m)
}

/// One draw from the model: w_d ~ Gamma(δ, δ), μ_d = λ_d w_d, y_d ~ Poisson(μ_d).
/// Returns (μ, y).
pub fn draw_counts<R: rand::RngCore + ?Sized>(
    lambdas: &[f64],
    delta: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<u64>), AreaError> {
    let mut mu = Vec::with_capacity(lambdas.len());
    let mut y = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let w = sample_gamma(rng, delta, delta).map_err(|e| AreaError::InvalidParams(e.to_string()))?;
        let m = l * w;
        y.push(sample_poisson(rng, m).map_err(|e| AreaError::InvalidParams(e.to_string()))?);
        mu.push(m);
    }
    Ok((mu, y))
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
