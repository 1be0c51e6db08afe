use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::sci::order_index;
use super::{bootstrap_area, BootError, BootstrapConfig, BootstrapEnsemble};
use crate::area::{AreaFitResult, FitOptions};
use crate::data::AreaDataset;

/// Max-type test of H₀: Bζ = b on area proportions ζ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtpResult {
    /// Bζ̂.
    pub estimate: Vec<f64>,
    /// Bootstrap root mean square of B(ζ̂* − ζ*).
    pub sigma: Vec<f64>,
    pub t_h: f64,
    pub q_h: f64,
    pub reject: bool,
    pub alpha: f64,
    pub order_index: usize,
    /// max_d |B(ζ̂* − ζ*)|_d / σ̂_d per replicate.
    pub null_statistic: Vec<f64>,
}

impl MtpResult {
    /// t_H for another hypothesised value b with the same bootstrap ensemble.
    pub fn statistic_for(&self, b: &[f64]) -> f64 {
        self.estimate.iter().zip(b).zip(&self.sigma).map(|((e, b), s)| (e - b).abs() / s).fold(0.0, f64::max)
    }

    pub fn reject_for(&self, b: &[f64]) -> bool {
        self.statistic_for(b) >= self.q_h
    }
}

fn props(v: &[f64], n: &[f64]) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().zip(n).map(|(a, n)| a / n))
}

pub fn mtp(ens: &BootstrapEnsemble, contrast: &DMatrix<f64>, b: &[f64], alpha: f64) -> Result<MtpResult, BootError> {
    let d = ens.ebp.len();
    if contrast.ncols() != d {
        return Err(BootError::DimensionMismatch(format!("contrast has {} columns for {} areas", contrast.ncols(), d)));
    }
    if b.len() != contrast.nrows() {
        return Err(BootError::DimensionMismatch(format!("b has {} entries for {} contrasts", b.len(), contrast.nrows())));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(BootError::InvalidConfig(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let n = &ens.populations;
    let errors: Vec<DVector<f64>> =
        ens.replicates.iter().map(|r| contrast * (props(&r.ebp, n) - props(&r.truth, n))).collect();
    let reps = errors.len() as f64;
    let sigma: Vec<f64> =
        (0..contrast.nrows()).map(|i| (errors.iter().map(|e| e[i] * e[i]).sum::<f64>() / reps).sqrt()).collect();
    if let Some(area) = sigma.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(BootError::ZeroSigma { area });
    }
    let null_statistic: Vec<f64> =
        errors.iter().map(|e| e.iter().zip(&sigma).map(|(v, s)| v.abs() / s).fold(0.0, f64::max)).collect();
    let k = order_index(alpha, null_statistic.len());
    let mut sorted = null_statistic.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q_h = sorted[k - 1];
    let estimate: Vec<f64> = (contrast * props(&ens.ebp, n)).iter().copied().collect();
    let mut out = MtpResult { estimate, sigma, t_h: 0.0, q_h, reject: false, alpha, order_index: k, null_statistic };
    out.t_h = out.statistic_for(b);
    out.reject = out.t_h >= q_h;
    Ok(out)
}

/// Bootstraps the area-level fit and runs [`mtp`] at `cfg.alpha`.
pub fn mtp_area(
    data: &AreaDataset,
    fit: &AreaFitResult,
    opts: &FitOptions,
    contrast: &DMatrix<f64>,
    b: &[f64],
    cfg: &BootstrapConfig,
) -> Result<MtpResult, BootError> {
    let ens = bootstrap_area(data, fit, opts, cfg)?;
    mtp(&ens, contrast, b, cfg.alpha)
}

/// Rows e_{2k} − e_{2k+1}: differences within consecutive pairs of a
/// parameter vector of even length `len`.
pub fn paired_difference_contrast(len: usize) -> Result<DMatrix<f64>, BootError> {
    if len % 2 != 0 {
        return Err(BootError::OddLength(len));
    }
    let mut m = DMatrix::zeros(len / 2, len);
    for k in 0..len / 2 {
        m[(k, 2 * k)] = 1.0;
        m[(k, 2 * k + 1)] = -1.0;
    }
    Ok(m)
}

/// Same as [`paired_difference_contrast`]; pairs are (men, women) per area.
pub fn gender_style_contrast(len: usize) -> Result<DMatrix<f64>, BootError> {
    paired_difference_contrast(len)
}
