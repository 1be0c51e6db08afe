//! Parametric bootstrap for both models, bootstrap MSE estimators,
//! simultaneous and individual intervals, and the max-type multiple test.
//!
//! Replicate b₁ draws from the stream (seed, b₁+1, 0) and its second-stage
//! replicate b₂ from (seed, b₁+1, b₂+1), so an ensemble is the same for any
//! thread count or evaluation order.

mod area;
mod mtp;
mod sci;
mod unit;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::area::AreaError;
use crate::unit::UnitError;

pub use area::bootstrap_area;
pub use mtp::{gender_style_contrast, mtp, mtp_area, paired_difference_contrast, MtpResult};
pub use sci::{bonferroni, order_index, sci, Interval, SimultaneousResult};
pub use unit::bootstrap_unit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaKind {
    /// √g₁, recomputed at every θ̂*.
    G1,
    /// √mse_P, recomputed at every θ̂* with the outer Var(θ̂).
    MsePlugin,
    /// √mse_B, held fixed across replicates.
    MseBoot,
    /// √mse_BC, held fixed across replicates.
    MseBootBc,
}

impl SigmaKind {
    pub const ALL: [SigmaKind; 4] = [SigmaKind::MseBoot, SigmaKind::MseBootBc, SigmaKind::MsePlugin, SigmaKind::G1];

    /// Column label used in reports: B, BC, P, G.
    pub fn label(self) -> &'static str {
        match self {
            SigmaKind::MseBoot => "B",
            SigmaKind::MseBootBc => "BC",
            SigmaKind::MsePlugin => "P",
            SigmaKind::G1 => "G",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub b1: usize,
    pub b2: usize,
    pub alpha: f64,
    pub seed: u64,
    pub sigma_kind: SigmaKind,
    /// Use the non-studentized statistic max |ζ̂* − ζ*| on the proportion scale.
    pub non_studentized: bool,
    /// Largest tolerated share of failed replicate fits.
    pub max_failure_rate: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            b1: 1000,
            b2: 1,
            alpha: 0.05,
            seed: 0,
            sigma_kind: SigmaKind::G1,
            non_studentized: false,
            max_failure_rate: 0.05,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), BootError> {
        if self.b1 < 100 {
            return Err(BootError::InvalidConfig(format!("B1 must be at least 100, got {}", self.b1)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(BootError::InvalidConfig(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(BootError::InvalidConfig("max_failure_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BootError {
    #[error(transparent)]
    Area(#[from] AreaError),
    #[error(transparent)]
    Unit(#[from] UnitError),
    #[error("{failed} of {total} bootstrap replicates failed")]
    TooManyFailures { failed: usize, total: usize },
    #[error("mse_BC needs a second-stage bootstrap (B2 >= 1)")]
    MissingSecondStage,
    #[error("variability estimate is zero or not finite for area {area}")]
    ZeroSigma { area: usize },
    #[error("sigma kind {0:?} is not available for the {1} model")]
    UnsupportedSigma(SigmaKind, &'static str),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("paired contrasts need an even number of entries, got {0}")]
    OddLength(usize),
    #[error("invalid bootstrap configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Area,
    Unit,
}

impl ModelKind {
    fn name(self) -> &'static str {
        match self {
            ModelKind::Area => "area",
            ModelKind::Unit => "unit",
        }
    }
}

/// One first-stage replicate; all area quantities on the count scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub index: usize,
    /// θ̂* = (β̂*, δ̂*).
    pub theta: Vec<f64>,
    /// Bootstrap truth μ*_d.
    pub truth: Vec<f64>,
    /// μ̂*_d.
    pub ebp: Vec<f64>,
    /// g₁(θ̂*) per area (area model).
    pub g1: Option<Vec<f64>>,
    /// mse_P(θ̂*) per area with the outer Var(θ̂) (area model).
    pub plugin: Option<Vec<f64>>,
    /// B2⁻¹ Σ_b₂ (μ̂** − μ**)² per area.
    pub inner_mse: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEnsemble {
    pub model: ModelKind,
    pub area_ids: Vec<String>,
    pub populations: Vec<f64>,
    pub theta_hat: Vec<f64>,
    /// EBP on the original data, count scale.
    pub ebp: Vec<f64>,
    pub g1: Option<Vec<f64>>,
    pub mse_plugin: Option<Vec<f64>>,
    pub replicates: Vec<Replicate>,
    pub failures: usize,
    pub b1: usize,
    pub b2: usize,
    pub seed: u64,
    /// Var(θ̂) = B1⁻¹ Σ (θ̂* − θ̄)(θ̂* − θ̄)ᵗ.
    pub vcov_theta: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapMse {
    pub mse_b: Vec<f64>,
    pub mse_bc: Option<Vec<f64>>,
    /// Areas whose raw 2·mse_B − inner term was not positive.
    pub bc_floored: Vec<bool>,
}

/// mse_B = B1⁻¹ Σ (μ̂* − μ*)² and, with a second stage,
/// mse_BC = max(2·mse_B − B1⁻¹ Σ mse^(b₁), 0).
pub fn mse_bootstrap(ens: &BootstrapEnsemble) -> BootstrapMse {
    let d = ens.ebp.len();
    let b = ens.replicates.len() as f64;
    let mut mse_b = vec![0.0; d];
    for r in &ens.replicates {
        for i in 0..d {
            let e = r.ebp[i] - r.truth[i];
            mse_b[i] += e * e / b;
        }
    }
    let inner: Option<Vec<f64>> = if ens.b2 > 0 && ens.replicates.iter().all(|r| r.inner_mse.is_some()) {
        let mut acc = vec![0.0; d];
        for r in &ens.replicates {
            for (a, v) in acc.iter_mut().zip(r.inner_mse.as_ref().unwrap()) {
                *a += v / b;
            }
        }
        Some(acc)
    } else {
        None
    };
    let mut floored = vec![false; d];
    let mse_bc = inner.map(|inner| {
        (0..d)
            .map(|i| {
                let v = 2.0 * mse_b[i] - inner[i];
                if v > 0.0 {
                    v
                } else {
                    floored[i] = true;
                    0.0
                }
            })
            .collect()
    });
    BootstrapMse { mse_b, mse_bc, bc_floored: floored }
}

impl BootstrapEnsemble {
    /// σ̂_d on the original data, count scale.
    pub fn sigma_hat(&self, kind: SigmaKind) -> Result<Vec<f64>, BootError> {
        let unsupported = || BootError::UnsupportedSigma(kind, self.model.name());
        match kind {
            SigmaKind::G1 => Ok(self.g1.as_ref().ok_or_else(unsupported)?.iter().map(|v| v.sqrt()).collect()),
            SigmaKind::MsePlugin => Ok(self.mse_plugin.as_ref().ok_or_else(unsupported)?.iter().map(|v| v.sqrt()).collect()),
            SigmaKind::MseBoot => Ok(mse_bootstrap(self).mse_b.iter().map(|v| v.sqrt()).collect()),
            SigmaKind::MseBootBc => {
                let m = mse_bootstrap(self);
                let bc = m.mse_bc.ok_or(BootError::MissingSecondStage)?;
                Ok(bc.iter().zip(&m.mse_b).zip(&m.bc_floored).map(|((bc, b), &f)| if f { b.sqrt() } else { bc.sqrt() }).collect())
            }
        }
    }

    /// σ̂*_d per replicate for the studentized statistic.
    pub fn sigma_star(&self, kind: SigmaKind) -> Result<Vec<Vec<f64>>, BootError> {
        let unsupported = || BootError::UnsupportedSigma(kind, self.model.name());
        match kind {
            SigmaKind::G1 => self
                .replicates
                .iter()
                .map(|r| Ok(r.g1.as_ref().ok_or_else(unsupported)?.iter().map(|v| v.sqrt()).collect()))
                .collect(),
            SigmaKind::MsePlugin => self
                .replicates
                .iter()
                .map(|r| Ok(r.plugin.as_ref().ok_or_else(unsupported)?.iter().map(|v| v.sqrt()).collect()))
                .collect(),
            SigmaKind::MseBoot | SigmaKind::MseBootBc => {
                let s = self.sigma_hat(kind)?;
                Ok(vec![s; self.replicates.len()])
            }
        }
    }
}

/// (1/B) Σ (θ* − θ̄)(θ* − θ̄)ᵗ.
pub(crate) fn vcov_of(thetas: &[&[f64]]) -> DMatrix<f64> {
    let k = thetas.first().map_or(0, |t| t.len());
    let b = thetas.len() as f64;
    let mut mean = vec![0.0; k];
    for t in thetas {
        for (m, v) in mean.iter_mut().zip(t.iter()) {
            *m += v / b;
        }
    }
    let mut v = DMatrix::<f64>::zeros(k, k);
    for t in thetas {
        for i in 0..k {
            for j in 0..k {
                v[(i, j)] += (t[i] - mean[i]) * (t[j] - mean[j]) / b;
            }
        }
    }
    v
}

/// Keeps successful replicates in index order and enforces the failure cap.
pub(crate) fn collect_replicates<E: std::fmt::Display>(
    results: Vec<Result<Replicate, E>>,
    cfg: &BootstrapConfig,
) -> Result<(Vec<Replicate>, usize), BootError> {
    let total = results.len();
    let mut kept = Vec::with_capacity(total);
    let mut failed = 0;
    for (b, r) in results.into_iter().enumerate() {
        match r {
            Ok(rep) => kept.push(rep),
            Err(e) => {
                failed += 1;
                log::warn!("bootstrap replicate {} discarded: {e}", b + 1);
            }
        }
    }
    if failed as f64 > cfg.max_failure_rate * total as f64 || kept.is_empty() {
        return Err(BootError::TooManyFailures { failed, total });
    }
    Ok((kept, failed))
}
