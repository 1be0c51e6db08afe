//! The count-dependent sums of the negative binomial likelihood,
//!
//!   L(y) = Σ_{j=1}^{y-1} ln(1+αj),  S1(y) = Σ j/(1+αj),  S2(y) = Σ (j/(1+αj))².
//!
//! Small counts are summed directly. Large counts use the gamma-function
//! closed forms when α ≥ 0.1 and an Euler–Maclaurin expansion otherwise;
//! the closed forms lose everything to cancellation as α → 0.

use crate::numerics::special::{digamma, ln_gamma, trigamma};

const DIRECT_MAX: u64 = 64;
const CLOSED_FORM_MIN_ALPHA: f64 = 0.1;
const SERIES_X: f64 = 0.1;

/// B_{2k}, k = 1..=8.
const BERNOULLI: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CountSums {
    pub l: f64,
    pub s1: f64,
    pub s2: f64,
}

/// Evaluates the sums up to the requested derivative order (0, 1 or 2).
pub fn count_sums(y: u64, alpha: f64, order: u8) -> CountSums {
    if y <= 1 {
        return CountSums::default();
    }
    if y <= DIRECT_MAX {
        direct(y, alpha, order)
    } else if alpha >= CLOSED_FORM_MIN_ALPHA {
        closed_form(y, alpha, order)
    } else {
        euler_maclaurin(y, alpha, order)
    }
}

pub fn direct(y: u64, alpha: f64, order: u8) -> CountSums {
    let mut out = CountSums::default();
    for j in 1..y {
        let j = j as f64;
        out.l += (alpha * j).ln_1p();
        if order >= 1 {
            let t = j / (1.0 + alpha * j);
            out.s1 += t;
            if order >= 2 {
                out.s2 += t * t;
            }
        }
    }
    out
}

fn closed_form(y: u64, alpha: f64, order: u8) -> CountSums {
    let delta = 1.0 / alpha;
    let n = (y - 1) as f64;
    let yf = y as f64;
    let mut out = CountSums {
        l: n * alpha.ln() + ln_gamma(delta + yf) - ln_gamma(delta + 1.0),
        ..Default::default()
    };
    if order >= 1 {
        let dpsi = digamma(delta + yf) - digamma(delta + 1.0);
        out.s1 = delta * n - delta * delta * dpsi;
        if order >= 2 {
            let dpsi1 = trigamma(delta + 1.0) - trigamma(delta + yf);
            let d2 = delta * delta;
            out.s2 = n * d2 - 2.0 * d2 * delta * dpsi + d2 * d2 * dpsi1;
        }
    }
    out
}

/// Σ_{m≥2} c_m x^m for a coefficient rule c(m); used for |x| < SERIES_X.
fn power_series(x: f64, c: impl Fn(f64) -> f64) -> f64 {
    let mut acc = 0.0;
    let mut pow = x * x;
    for m in 2..40 {
        let term = c(m as f64) * pow;
        acc += term;
        if m > 3 && term.abs() <= 1e-18 * acc.abs() {
            break;
        }
        pow *= x;
    }
    acc
}

fn sign(m: f64) -> f64 {
    if m as u64 % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// (1+x) ln(1+x) − x.
fn int_log(x: f64) -> f64 {
    if x < SERIES_X {
        power_series(x, |m| sign(m) / (m * (m - 1.0)))
    } else {
        (1.0 + x) * x.ln_1p() - x
    }
}

/// x − ln(1+x).
fn int_ratio(x: f64) -> f64 {
    if x < SERIES_X {
        power_series(x, |m| sign(m) / m)
    } else {
        x - x.ln_1p()
    }
}

/// x − 2 ln(1+x) + x/(1+x).
fn int_ratio_sq(x: f64) -> f64 {
    if x < SERIES_X {
        power_series(x, |m| -sign(m) * (1.0 - 2.0 / m))
    } else {
        x - 2.0 * x.ln_1p() + x / (1.0 + x)
    }
}

/// ln(1+x) − x/(1+x).
pub fn log_minus_ratio(x: f64) -> f64 {
    if x < SERIES_X {
        power_series(x, |m| sign(m) * (m - 1.0) / m)
    } else {
        x.ln_1p() - x / (1.0 + x)
    }
}

/// ln(1+x) − x/(1+x) − x²/(2(1+x)²).
pub fn log_minus_ratio2(x: f64) -> f64 {
    if x < SERIES_X {
        power_series(x, |m| -sign(m) * (m - 1.0) * (m - 2.0) / (2.0 * m))
    } else {
        let r = x / (1.0 + x);
        x.ln_1p() - r - 0.5 * r * r
    }
}

fn euler_maclaurin(y: u64, alpha: f64, order: u8) -> CountSums {
    let n = (y - 1) as f64;
    let x = alpha * n;
    let lu = -x.ln_1p();
    let u = 1.0 / (1.0 + x);
    // u^m − 1 without cancellation
    let um1 = |m: f64| (m * lu).exp_m1();

    let mut l = int_log(x) / alpha + 0.5 * x.ln_1p();
    let mut apow = alpha;
    for (i, b) in BERNOULLI.iter().enumerate() {
        let k2 = 2.0 * (i + 1) as f64;
        l += b / (k2 * (k2 - 1.0)) * apow * um1(k2 - 1.0);
        apow *= alpha * alpha;
    }
    let mut out = CountSums { l, ..Default::default() };
    if order >= 1 {
        let a2 = alpha * alpha;
        let mut s1 = int_ratio(x) / a2 + 0.5 * n * u;
        let mut apow = 1.0;
        for (i, b) in BERNOULLI.iter().enumerate() {
            let k2 = 2.0 * (i + 1) as f64;
            s1 += b / k2 * apow * um1(k2);
            apow *= a2;
        }
        out.s1 = s1;
        if order >= 2 {
            let g = n * u;
            let mut s2 = int_ratio_sq(x) / (a2 * alpha) + 0.5 * g * g;
            let mut apow = 1.0 / alpha;
            for (i, b) in BERNOULLI.iter().enumerate() {
                let k2 = 2.0 * (i + 1) as f64;
                s2 -= b / k2 * apow * (k2 * um1(k2 + 1.0) - 2.0 * um1(k2));
                apow *= a2;
            }
            out.s2 = s2;
        }
    }
    out
}
