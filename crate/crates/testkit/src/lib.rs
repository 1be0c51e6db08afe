//! Independent reference computations used as test oracles: adaptive
//! quadrature, finite differences, distribution functions and a KS test.

use statrs::function::gamma::ln_gamma;

/// Adaptive Simpson quadrature with Richardson extrapolation.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Composite Gauss–Legendre rule with `panels` equal panels of `order` nodes.
pub fn integrate_panels<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let c = a + h * (k as f64 + 0.5);
        total += x.iter().zip(&w).map(|(xi, wi)| wi * f(c + 0.5 * h * xi)).sum::<f64>() * 0.5 * h;
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// ln ∫ Poisson(y | λw) Gamma(w | δ, δ) dw + ln y!, by quadrature over t = ln w.
pub fn poisson_gamma_mixture_loglik(y: u64, lambda: f64, delta: f64) -> f64 {
    let yf = y as f64;
    let a = yf + delta;
    let b = lambda + delta;
    // log integrand in t, up to constants: a t − b eᵗ; mode at ln(a/b)
    let t0 = (a / b).ln();
    let peak = a * t0 - a;
    let g = |t: f64| (a * t - b * t.exp() - peak).exp();
    let lo = t0 - 45.0 / a.min(1.0) - 45.0 / a.sqrt();
    let hi = t0 + 5.0 + 10.0 / a.sqrt();
    let total = integrate_panels(&g, lo, hi, 400, 20);
    let konst = yf * lambda.ln() + delta * delta.ln() - ln_gamma(delta);
    konst + peak + total.ln()
}

/// NB(λ, δ) log pmf through log-gamma.
pub fn nb_logpmf(y: u64, lambda: f64, delta: f64) -> f64 {
    let yf = y as f64;
    ln_gamma(yf + delta) - ln_gamma(delta) - ln_gamma(yf + 1.0) + delta * (delta / (lambda + delta)).ln()
        + yf * (lambda / (lambda + delta)).ln()
}

/// Central-difference gradient with relative step.
pub fn gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let step = h * x[i].abs().max(1.0);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += step;
            xm[i] -= step;
            (f(&xp) - f(&xm)) / (2.0 * step)
        })
        .collect()
}

/// Jacobian of a vector function by central differences; row i = ∂g/∂x_i.
pub fn jacobian<G: Fn(&[f64]) -> Vec<f64>>(g: &G, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    (0..x.len())
        .map(|i| {
            let step = h * x[i].abs().max(1.0);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += step;
            xm[i] -= step;
            g(&xp).iter().zip(g(&xm)).map(|(a, b)| (a - b) / (2.0 * step)).collect()
        })
        .collect()
}

/// Relative error with an absolute floor.
pub fn rel_err(got: f64, want: f64, floor: f64) -> f64 {
    (got - want).abs() / want.abs().max(floor)
}

/// One-sample Kolmogorov–Smirnov statistic for a continuous CDF.
pub fn ks_statistic<C: Fn(f64) -> f64>(sample: &[f64], cdf: C) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the KS statistic (Kolmogorov distribution).
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let nf = n as f64;
    let t = (nf.sqrt() + 0.12 + 0.11 / nf.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * t * t).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

/// Discrete analogue: max |F_n(k) − F(k)| over integer support points.
pub fn ks_discrete<C: Fn(u64) -> f64>(sample: &[u64], cdf: C) -> f64 {
    let mut s = sample.to_vec();
    s.sort_unstable();
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < s.len() {
        let v = s[i];
        while i < s.len() && s[i] == v {
            i += 1;
        }
        d = d.max((i as f64 / n - cdf(v)).abs());
    }
    d
}
