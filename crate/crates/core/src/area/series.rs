//! Truncated expectations over the negative binomial pmf.
//!
//! The sum runs j = 0, 1, … and stops at the first J where the remaining
//! tail mass drops below 1e-12, or at J = 10(λ + 10·sd(y)).

const TAIL: f64 = 1e-12;

/// NB(λ, δ) probabilities P(y = j) for j = 0..=J under the truncation rule.
pub fn nb_pmf_truncated(lambda: f64, delta: f64) -> Vec<f64> {
    let sd = (lambda + lambda * lambda / delta).sqrt();
    let cap = (10.0 * (lambda + 10.0 * sd)).ceil().max(10.0) as usize;
    let log_q = (lambda / (lambda + delta)).ln();
    let mut lp = -delta * (lambda / delta).ln_1p();
    let mut out = Vec::new();
    let mut cum = 0.0;
    for j in 0..=cap {
        let pj = lp.exp();
        out.push(pj);
        cum += pj;
        if j as f64 > lambda && 1.0 - cum < TAIL {
            break;
        }
        let jf = j as f64;
        lp += ((jf + delta) / (jf + 1.0)).ln() + log_q;
    }
    out
}

/// E f(y) under NB(λ, δ), truncated.
pub fn nb_expectation(lambda: f64, delta: f64, f: impl Fn(f64) -> f64) -> f64 {
    nb_pmf_truncated(lambda, delta).iter().enumerate().map(|(j, p)| p * f(j as f64)).sum()
}

/// E Σ_{j=0}^{y-1} (δ + j)^{-2} = Σ_j (δ+j)^{-2} P(y > j).
pub fn expected_inverse_square_sum(lambda: f64, delta: f64) -> f64 {
    let pmf = nb_pmf_truncated(lambda, delta);
    let mut surv = 1.0;
    let mut acc = 0.0;
    for (j, p) in pmf.iter().enumerate() {
        surv -= p;
        if surv <= 0.0 {
            break;
        }
        let t = delta + j as f64;
        acc += surv / (t * t);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pmf_sums_to_one_with_nb_moments() {
        for &(l, d) in &[(0.3, 0.1), (5.0, 2.48), (80.0, 50.0), (1e4, 2.48), (1e4, 1e6)] {
            let pmf = nb_pmf_truncated(l, d);
            let s: f64 = pmf.iter().sum();
            assert!((s - 1.0).abs() < 1e-10, "({l},{d}) {s}");
            let m = nb_expectation(l, d, |y| y);
            let v = nb_expectation(l, d, |y| (y - l) * (y - l));
            assert!((m - l).abs() / l < 1e-9, "mean {m}");
            assert!((v / (l + l * l / d) - 1.0).abs() < 1e-7, "var {v}");
        }
    }
}
