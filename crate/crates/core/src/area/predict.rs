//! Best predictor of μ_d = λ_d w_d, its first MSE term and the plug-in MSE.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::series::nb_expectation;
use super::{AreaError, Design, ModelParams};
use crate::data::{AreaDataset, AreaRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaPrediction {
    pub area_id: String,
    pub mu_hat: f64,
    pub prop_hat: f64,
    pub g1: f64,
    pub mse_plugin: Option<f64>,
    pub mse_boot: Option<f64>,
    pub mse_boot_bc: Option<f64>,
}

fn lambda_of(params: &ModelParams, x: &[f64]) -> f64 {
    x.iter().zip(&params.beta).map(|(a, b)| a * b).sum::<f64>().exp()
}

/// ψ = λ(y + δ)/(λ + δ).
#[inline]
pub fn bp_value(lambda: f64, delta: f64, y: f64) -> f64 {
    lambda * (y + delta) / (lambda + delta)
}

pub fn area_bp(params: &ModelParams, record: &AreaRecord) -> f64 {
    bp_value(lambda_of(params, &record.x), params.delta, record.y as f64)
}

/// (a, b) with ∂ψ/∂θ = a + b·y, θ = (β, δ).
pub fn bp_gradient_parts(x: &[f64], lambda: f64, delta: f64) -> (Vec<f64>, Vec<f64>) {
    let s = lambda + delta;
    let s2 = s * s;
    let p = x.len();
    let mut a = Vec::with_capacity(p + 1);
    let mut b = Vec::with_capacity(p + 1);
    for &xk in x {
        a.push(xk * lambda * delta * delta / s2);
        b.push(xk * lambda * delta / s2);
    }
    a.push(lambda * lambda / s2);
    b.push(-lambda / s2);
    (a, b)
}

/// ∂ψ_d/∂(β, δ) at the observed count.
pub fn bp_gradient(params: &ModelParams, record: &AreaRecord) -> Vec<f64> {
    let lambda = lambda_of(params, &record.x);
    let (a, b) = bp_gradient_parts(&record.x, lambda, params.delta);
    let y = record.y as f64;
    a.iter().zip(&b).map(|(a, b)| a + b * y).collect()
}

/// κ₁ − κ₂ = λ²/(λ + δ).
#[inline]
pub fn g1_value(lambda: f64, delta: f64) -> f64 {
    lambda * lambda / (lambda + delta)
}

pub fn area_g1(params: &ModelParams, record: &AreaRecord) -> f64 {
    g1_value(lambda_of(params, &record.x), params.delta)
}

/// κ₁ − κ₂ with κ₂ summed over the truncated NB pmf.
pub fn area_g1_series(params: &ModelParams, record: &AreaRecord) -> f64 {
    let l = lambda_of(params, &record.x);
    let d = params.delta;
    let k1 = l * l * (d + 1.0) / d;
    let k2 = nb_expectation(l, d, |j| {
        let v = bp_value(l, d, j);
        v * v
    });
    (k1 - k2).max(0.0)
}

fn quad(v: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += a[i] * v[(i, j)] * b[j];
        }
    }
    s
}

/// g1 + E[(∂ψ/∂θ)ᵗ V (∂ψ/∂θ)] over y ~ NB(λ, δ); the gradient is linear in y
/// so only the first two moments enter.
pub fn mse_plugin_value(x: &[f64], lambda: f64, delta: f64, vcov: &DMatrix<f64>) -> f64 {
    let (a, b) = bp_gradient_parts(x, lambda, delta);
    let ey = lambda;
    let ey2 = lambda + lambda * lambda / delta + lambda * lambda;
    let c = quad(vcov, &a, &a) + 2.0 * quad(vcov, &a, &b) * ey + quad(vcov, &b, &b) * ey2;
    g1_value(lambda, delta) + c.max(0.0)
}

fn check_vcov(p: usize, vcov: &DMatrix<f64>) -> Result<(), AreaError> {
    if vcov.nrows() != p + 1 || vcov.ncols() != p + 1 {
        return Err(AreaError::DimensionMismatch(format!(
            "vcov is {}x{}, expected {}x{}",
            vcov.nrows(),
            vcov.ncols(),
            p + 1,
            p + 1
        )));
    }
    Ok(())
}

/// Plug-in MSE per area; `vcov` is Var(θ̂) for θ = (β, δ).
pub fn area_mse_plugin(params: &ModelParams, data: &AreaDataset, vcov: &DMatrix<f64>) -> Result<Vec<f64>, AreaError> {
    params.validate()?;
    check_vcov(data.p(), vcov)?;
    let design = Design::from_dataset(data);
    let lam = design.lambdas(&params.beta)?;
    Ok((0..design.d).map(|i| mse_plugin_value(design.row(i), lam[i], params.delta, vcov)).collect())
}

/// Same quantity with the expectation summed term by term over the NB pmf.
pub fn area_mse_plugin_series(params: &ModelParams, data: &AreaDataset, vcov: &DMatrix<f64>) -> Result<Vec<f64>, AreaError> {
    params.validate()?;
    check_vcov(data.p(), vcov)?;
    Ok(data
        .areas
        .iter()
        .map(|rec| {
            let l = lambda_of(params, &rec.x);
            let (a, b) = bp_gradient_parts(&rec.x, l, params.delta);
            let c = nb_expectation(l, params.delta, |j| {
                let g: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a + b * j).collect();
                quad(vcov, &g, &g)
            });
            area_g1_series(params, rec) + c
        })
        .collect())
}

/// EBP and g1 for every area; MSE columns are filled in by the bootstrap.
pub fn area_predictions(params: &ModelParams, data: &AreaDataset) -> Result<Vec<AreaPrediction>, AreaError> {
    params.validate()?;
    let design = Design::from_dataset(data);
    let lam = design.lambdas(&params.beta)?;
    Ok(data
        .areas
        .iter()
        .zip(&lam)
        .map(|(rec, &l)| {
            let mu = bp_value(l, params.delta, rec.y as f64);
            AreaPrediction {
                area_id: rec.area_id.clone(),
                mu_hat: mu,
                prop_hat: mu / rec.population as f64,
                g1: g1_value(l, params.delta),
                mse_plugin: None,
                mse_boot: None,
                mse_boot_bc: None,
            }
        })
        .collect())
}
