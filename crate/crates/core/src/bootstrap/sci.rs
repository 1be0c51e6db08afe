use serde::{Deserialize, Serialize};

use super::{BootError, BootstrapConfig, BootstrapEnsemble, SigmaKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn centered(center: f64, half: f64) -> Self {
        Self { lo: center - half, hi: center + half }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn scaled(&self, by: f64) -> Self {
        Self { lo: self.lo / by, hi: self.hi / by }
    }
}

/// 1-based rank ⌈(1 − α)B + 1⌉ of the order statistic used as a bootstrap
/// quantile, capped at B.
pub fn order_index(alpha: f64, b: usize) -> usize {
    let k = ((1.0 - alpha) * b as f64 + 1.0 - 1e-9).ceil() as usize;
    k.clamp(1, b.max(1))
}

fn order_stat(mut v: Vec<f64>, k: usize) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[k - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimultaneousResult {
    pub area_ids: Vec<String>,
    pub populations: Vec<f64>,
    /// μ̂_d, count scale.
    pub ebp: Vec<f64>,
    /// Scale that divides the absolute error: σ̂_d, or N_d for the
    /// non-studentized statistic. Count scale.
    pub sigma: Vec<f64>,
    pub q_sci: f64,
    pub q_ici: Vec<f64>,
    /// Simultaneous intervals, count scale.
    pub sci: Vec<Interval>,
    /// Individual intervals, count scale.
    pub ici: Vec<Interval>,
    pub sigma_kind: SigmaKind,
    pub non_studentized: bool,
    pub alpha: f64,
    pub order_index: usize,
    pub replicates: usize,
    /// max_d S_d per replicate, in replicate order.
    pub max_statistic: Vec<f64>,
}

impl SimultaneousResult {
    pub fn prop(&self) -> Vec<f64> {
        self.ebp.iter().zip(&self.populations).map(|(m, n)| m / n).collect()
    }

    pub fn sci_prop(&self) -> Vec<Interval> {
        self.sci.iter().zip(&self.populations).map(|(i, &n)| i.scaled(n)).collect()
    }

    pub fn ici_prop(&self) -> Vec<Interval> {
        self.ici.iter().zip(&self.populations).map(|(i, &n)| i.scaled(n)).collect()
    }
}

/// Per-area scale on the original data and per replicate.
fn scales(ens: &BootstrapEnsemble, cfg: &BootstrapConfig) -> Result<(Vec<f64>, Vec<Vec<f64>>), BootError> {
    if cfg.non_studentized {
        let n = ens.populations.clone();
        return Ok((n.clone(), vec![n; ens.replicates.len()]));
    }
    Ok((ens.sigma_hat(cfg.sigma_kind)?, ens.sigma_star(cfg.sigma_kind)?))
}

fn check_scale(v: &[f64]) -> Result<(), BootError> {
    match v.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
        Some(area) => Err(BootError::ZeroSigma { area }),
        None => Ok(()),
    }
}

/// |μ̂*_d − μ*_d| / σ̂*_d for every replicate and area.
fn statistics(ens: &BootstrapEnsemble, star: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, BootError> {
    ens.replicates
        .iter()
        .zip(star)
        .map(|(r, s)| {
            check_scale(s)?;
            Ok(r.ebp.iter().zip(&r.truth).zip(s).map(|((e, t), s)| (e - t).abs() / s).collect())
        })
        .collect()
}

/// Simultaneous and individual intervals at level 1 − α.
pub fn sci(ens: &BootstrapEnsemble, cfg: &BootstrapConfig) -> Result<SimultaneousResult, BootError> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(BootError::InvalidConfig(format!("alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    let (sigma, star) = scales(ens, cfg)?;
    check_scale(&sigma)?;
    let stats = statistics(ens, &star)?;
    let b = stats.len();
    let k = order_index(cfg.alpha, b);
    let max_statistic: Vec<f64> = stats.iter().map(|s| s.iter().copied().fold(0.0, f64::max)).collect();
    let q_sci = order_stat(max_statistic.clone(), k);
    let d = ens.ebp.len();
    let q_ici: Vec<f64> = (0..d).map(|i| order_stat(stats.iter().map(|s| s[i]).collect(), k)).collect();
    let sci = (0..d).map(|i| Interval::centered(ens.ebp[i], q_sci * sigma[i])).collect();
    let ici = (0..d).map(|i| Interval::centered(ens.ebp[i], q_ici[i] * sigma[i])).collect();
    Ok(SimultaneousResult {
        area_ids: ens.area_ids.clone(),
        populations: ens.populations.clone(),
        ebp: ens.ebp.clone(),
        sigma,
        q_sci,
        q_ici,
        sci,
        ici,
        sigma_kind: cfg.sigma_kind,
        non_studentized: cfg.non_studentized,
        alpha: cfg.alpha,
        order_index: k,
        replicates: b,
        max_statistic,
    })
}

/// Individual intervals at level 1 − α/D; a conservative comparison for the
/// simultaneous intervals. Count scale.
pub fn bonferroni(ens: &BootstrapEnsemble, cfg: &BootstrapConfig) -> Result<Vec<Interval>, BootError> {
    let (sigma, star) = scales(ens, cfg)?;
    check_scale(&sigma)?;
    let stats = statistics(ens, &star)?;
    let d = ens.ebp.len();
    let k = order_index(cfg.alpha / d as f64, stats.len());
    Ok((0..d)
        .map(|i| Interval::centered(ens.ebp[i], order_stat(stats.iter().map(|s| s[i]).collect(), k) * sigma[i]))
        .collect())
}
