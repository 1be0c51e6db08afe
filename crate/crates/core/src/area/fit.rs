//! Maximum likelihood fit of the area-level model.
//!
//! β is profiled out for fixed α by Fisher scoring (or Newton–Raphson), the
//! profile is scanned on a log grid of α and refined by golden section, and
//! the joint optimum is polished with Newton steps on the observed
//! information.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::sums::count_sums;
use super::{
    area_kernel, counts, information_counts, loglik_counts, max_abs, score_counts, to_dvector, AreaError, Design,
    InformationKind, ModelParams, NonConvergence,
};
use crate::data::AreaDataset;
use crate::numerics::linalg::{solve_spd, solve_spd_or_lu};

/// Inner β tolerance while scanning α; the final Newton polish does the rest.
const PROFILE_TOL: f64 = 1e-6;
/// Width of the final golden-section bracket in ln α.
const GOLDEN_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitAlgorithm {
    FisherScoring,
    NewtonRaphson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub algorithm: FitAlgorithm,
    pub grid_points: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub score_tol: f64,
    pub loglik_rel_tol: f64,
    pub max_iter: usize,
    /// Return `DegenerateDispersion` instead of a flagged boundary fit.
    pub strict_dispersion: bool,
    pub keep_profile: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            algorithm: FitAlgorithm::FisherScoring,
            grid_points: 31,
            alpha_min: 1e-6,
            alpha_max: 1e3,
            score_tol: 1e-8,
            loglik_rel_tol: 1e-10,
            max_iter: 100,
            strict_dispersion: false,
            keep_profile: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaFitResult {
    pub params: ModelParams,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub algorithm: FitAlgorithm,
    pub profile_alpha_grid: Option<Vec<(f64, f64)>>,
    /// Profile maximized at the smallest admissible α; δ is set to 1/alpha_min.
    pub boundary: bool,
    pub score_max_norm: f64,
}

pub fn fit_area_model(data: &AreaDataset, options: &FitOptions) -> Result<AreaFitResult, AreaError> {
    fit_counts(&Design::from_dataset(data), &counts(data), options)
}

struct Profile {
    beta: Vec<f64>,
    value: f64,
}

struct KernelEval {
    value: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

struct Fitter<'a> {
    design: &'a Design,
    y: &'a [u64],
    yf: Vec<f64>,
    algorithm: FitAlgorithm,
    iterations: usize,
}

impl<'a> Fitter<'a> {
    fn count_part(&self, alpha: f64) -> f64 {
        self.y.iter().map(|&y| count_sums(y, alpha, 0).l).sum()
    }

    /// Kernel value with its β-score and β-information (Fisher or observed).
    fn eval(&self, beta: &[f64], alpha: f64) -> Result<KernelEval, AreaError> {
        let p = self.design.p;
        let mut value = 0.0;
        let mut score = vec![0.0; p];
        let mut info = vec![0.0; p * p];
        for (row, &y) in self.design.x.chunks_exact(p).zip(&self.yf) {
            let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
            if !(eta.is_finite() && eta <= super::MAX_ETA) {
                return Err(AreaError::NonFiniteResult);
            }
            let l = eta.exp();
            value += area_kernel(y, eta, l, alpha);
            let den = 1.0 + alpha * l;
            let r = (y - l) / den;
            let w = match self.algorithm {
                FitAlgorithm::FisherScoring => l / den,
                FitAlgorithm::NewtonRaphson => (1.0 + alpha * y) * l / (den * den),
            };
            for (k, (&xk, sk)) in row.iter().zip(score.iter_mut()).enumerate() {
                *sk += xk * r;
                let wk = w * xk;
                for (cell, &xm) in info[k * p..k * p + k + 1].iter_mut().zip(row) {
                    *cell += wk * xm;
                }
            }
        }
        for k in 0..p {
            for m in 0..k {
                info[m * p + k] = info[k * p + m];
            }
        }
        if value.is_finite() {
            Ok(KernelEval { value, score: DVector::from_vec(score), info: DMatrix::from_row_slice(p, p, &info) })
        } else {
            Err(AreaError::NonFiniteResult)
        }
    }

    /// Maximizes the kernel over β for fixed α (α = 0 is the Poisson GLM).
    fn profile_beta(&mut self, alpha: f64, start: &[f64], tol: f64) -> Result<(Vec<f64>, f64), AreaError> {
        let mut beta = start.to_vec();
        let mut cur = self.eval(&beta, alpha)?;
        for _ in 0..200 {
            self.iterations += 1;
            let step = solve_spd_or_lu(&cur.info, &cur.score).map_err(|_| AreaError::SingularMatrix)?;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
                if let Ok(ev) = self.eval(&cand, alpha) {
                    if ev.value >= cur.value - 1e-12 * cur.value.abs() {
                        beta = cand;
                        cur = ev;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            let size = t * step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
            if !accepted || size <= tol * (1.0 + max_abs(&beta)) {
                break;
            }
        }
        Ok((beta, cur.value))
    }

    fn profile(&mut self, alpha: f64, start: &[f64]) -> Result<Profile, AreaError> {
        let (beta, k) = self.profile_beta(alpha, start, PROFILE_TOL)?;
        Ok(Profile { beta, value: k + self.count_part(alpha) })
    }
}

fn poisson_start(design: &Design, y: &[f64]) -> Result<Vec<f64>, AreaError> {
    let p = design.p;
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xtz = DVector::<f64>::zeros(p);
    for i in 0..design.d {
        let row = design.row(i);
        let z = (y[i] + 0.5).ln();
        for k in 0..p {
            xtz[k] += row[k] * z;
            for m in 0..p {
                xtx[(k, m)] += row[k] * row[m];
            }
        }
    }
    let b = solve_spd(&xtx, &xtz).map_err(|_| AreaError::RankDeficient)?;
    Ok(b.iter().copied().collect())
}

/// Moment-type starting value for α from the Poisson fit.
fn alpha_start(design: &Design, y: &[f64], beta: &[f64]) -> f64 {
    let d = design.d as f64;
    let etas: Vec<f64> = (0..design.d).map(|i| design.eta(i, beta)).collect();
    let s2 = etas.iter().zip(y).map(|(e, &y)| (e - y.max(0.5).ln()).powi(2)).sum::<f64>() / d;
    etas.iter().map(|e| (s2 - e) / (e * e)).sum::<f64>() / d
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

pub fn fit_counts(design: &Design, y: &[u64], options: &FitOptions) -> Result<AreaFitResult, AreaError> {
    if design.d <= design.p {
        return Err(AreaError::TooFewAreas { d: design.d, p: design.p });
    }
    if y.len() != design.d {
        return Err(AreaError::DimensionMismatch(format!("{} counts for {} areas", y.len(), design.d)));
    }
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let mut f = Fitter { design, y, yf, algorithm: options.algorithm, iterations: 0 };

    let ls = poisson_start(design, &f.yf)?;
    let (beta0, _) = f.profile_beta(0.0, &ls, PROFILE_TOL)?;

    let mut grid = log_grid(options.alpha_min, options.alpha_max, options.grid_points.max(3));
    let a0 = alpha_start(design, &f.yf, &beta0);
    if a0.is_finite() && a0 > options.alpha_min && a0 < options.alpha_max {
        grid.push(a0);
        grid.sort_by(|a, b| a.total_cmp(b));
    }

    let mut profiles = Vec::with_capacity(grid.len());
    let mut warm = beta0.clone();
    for &a in &grid {
        let pr = f.profile(a, &warm)?;
        warm = pr.beta.clone();
        profiles.push(pr);
    }
    let best = (0..grid.len()).max_by(|&i, &j| profiles[i].value.total_cmp(&profiles[j].value)).unwrap();

    // golden section on ln α inside the neighbouring grid cells
    let lo_i = best.saturating_sub(1);
    let hi_i = (best + 1).min(grid.len() - 1);
    let (mut a, mut b) = (grid[lo_i].ln(), grid[hi_i].ln());
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut dpt = a + g * (b - a);
    let mut warm = profiles[best].beta.clone();
    let mut pc = f.profile(c.exp(), &warm)?;
    let mut pd = f.profile(dpt.exp(), &pc.beta)?;
    while b - a > GOLDEN_TOL {
        if pc.value >= pd.value {
            b = dpt;
            dpt = c;
            pd = pc;
            c = b - g * (b - a);
            pc = f.profile(c.exp(), &pd.beta)?;
        } else {
            a = c;
            c = dpt;
            pc = pd;
            dpt = a + g * (b - a);
            pd = f.profile(dpt.exp(), &pc.beta)?;
        }
    }
    let mut cand = if pc.value >= pd.value { (c.exp(), pc) } else { (dpt.exp(), pd) };
    if profiles[best].value > cand.1.value {
        cand = (grid[best], Profile { beta: profiles[best].beta.clone(), value: profiles[best].value });
    }
    warm.clone_from(&cand.1.beta);
    let alpha_hat = cand.0;

    let profile_alpha_grid =
        options.keep_profile.then(|| grid.iter().zip(&profiles).map(|(&a, p)| (a, p.value)).collect::<Vec<_>>());

    let boundary_fit = |f: &mut Fitter| -> Result<AreaFitResult, AreaError> {
        if options.strict_dispersion {
            return Err(AreaError::DegenerateDispersion);
        }
        let pr = f.profile(options.alpha_min, &warm)?;
        let params = ModelParams::from_alpha(pr.beta, options.alpha_min)?;
        let s = score_counts(design, y, &params)?;
        let pmax = max_abs(&s[..design.p]);
        Ok(AreaFitResult {
            loglik: pr.value,
            iterations: f.iterations,
            converged: pmax <= options.score_tol.max(1e-8 * scale(&f.yf)),
            algorithm: options.algorithm,
            profile_alpha_grid: profile_alpha_grid.clone(),
            boundary: true,
            score_max_norm: pmax,
            params,
        })
    };

    if alpha_hat <= options.alpha_min * (1.0 + 1e-3) {
        return boundary_fit(&mut f);
    }

    // joint Newton polish in (β, α)
    let p = design.p;
    let mut theta: Vec<f64> = warm.clone();
    theta.push(alpha_hat);
    let params_of = |t: &[f64]| ModelParams::from_alpha(t[..p].to_vec(), t[p]);
    let mut params = params_of(&theta)?;
    let mut ll = loglik_counts(design, y, &params)?;
    let mut converged = false;
    let mut score_norm = f64::INFINITY;
    let mut rel_change = f64::INFINITY;
    for _ in 0..options.max_iter {
        f.iterations += 1;
        let s = score_counts(design, y, &params)?;
        score_norm = max_abs(&s);
        if score_norm <= options.score_tol && rel_change <= options.loglik_rel_tol {
            converged = true;
            break;
        }
        let j = information_counts(design, y, &params, InformationKind::Observed)?;
        let sv = to_dvector(&s);
        let step = match solve_spd(&j, &sv) {
            Ok(st) => st,
            Err(_) => {
                let fi = information_counts(design, y, &params, InformationKind::Fisher)?;
                solve_spd_or_lu(&fi, &sv).map_err(|_| AreaError::SingularMatrix)?
            }
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            if cand[p] > 0.0 {
                if let Ok(cp) = params_of(&cand) {
                    if let Ok(cl) = loglik_counts(design, y, &cp) {
                        if cl >= ll - 1e-13 * ll.abs() {
                            rel_change = (cl - ll).abs() / ll.abs().max(1.0);
                            theta = cand;
                            params = cp;
                            ll = cl;
                            moved = true;
                            break;
                        }
                    }
                }
            }
            t *= 0.5;
        }
        if theta[p] < options.alpha_min {
            return boundary_fit(&mut f);
        }
        if !moved {
            // no representable ascent left; accept if the score is at round-off level
            let s = score_counts(design, y, &params)?;
            score_norm = max_abs(&s);
            converged = score_norm <= options.score_tol.max(1e-8 * scale(&f.yf));
            break;
        }
    }
    if !converged {
        return Err(AreaError::NonConvergence(Box::new(NonConvergence {
            iterations: f.iterations,
            params,
            loglik: ll,
            score_max_norm: score_norm,
        })));
    }
    Ok(AreaFitResult {
        params,
        loglik: ll,
        iterations: f.iterations,
        converged,
        algorithm: options.algorithm,
        profile_alpha_grid,
        boundary: false,
        score_max_norm: score_norm,
    })
}

/// Magnitude of the counts, used to scale round-off tolerances.
fn scale(y: &[f64]) -> f64 {
    y.iter().fold(1.0f64, |m, v| m.max(*v))
}
