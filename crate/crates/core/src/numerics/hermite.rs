//! Gauss–Hermite rules for the weight e^{-t²}.
//!
//! Nodes come from the eigenvalues of the symmetric Jacobi matrix of the
//! Hermite recurrence (Golub–Welsch). Each node is then polished with a few
//! Newton steps on the orthonormal Hermite polynomial, and the weights are
//! recomputed from the Christoffel function, which keeps the small tail
//! weights accurate in relative terms.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::NumericsError;

pub const MAX_NODES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// ∫ f(t) e^{-t²} dt.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| w * f(t)).sum()
    }
}

/// Standard q-point Gauss–Hermite rule, nodes ascending.
pub fn gauss_hermite(q: usize) -> Result<GaussHermite, NumericsError> {
    if q == 0 || q > MAX_NODES {
        return Err(NumericsError::Domain(format!(
            "Gauss-Hermite node count must be in 1..={MAX_NODES}, got {q}"
        )));
    }
    if q == 1 {
        return Ok(GaussHermite { nodes: vec![0.0], weights: vec![std::f64::consts::PI.sqrt()] });
    }
    let mut jacobi = DMatrix::<f64>::zeros(q, q);
    for k in 1..q {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.total_cmp(b));

    let mut weights = Vec::with_capacity(q);
    for t in nodes.iter_mut() {
        for _ in 0..6 {
            let (pq, pq1, _) = orthonormal_hermite(q, *t);
            // p_q'(t) = sqrt(2q) p_{q-1}(t)
            let step = pq / ((2.0 * q as f64).sqrt() * pq1);
            *t -= step;
            if step.abs() <= 1e-15 * t.abs().max(1.0) {
                break;
            }
        }
        let (_, _, christoffel) = orthonormal_hermite(q, *t);
        weights.push(1.0 / christoffel);
    }
    // exact symmetry
    for i in 0..q / 2 {
        let j = q - 1 - i;
        let t = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -t;
        nodes[j] = t;
        weights[i] = w;
        weights[j] = w;
    }
    if q % 2 == 1 {
        nodes[q / 2] = 0.0;
    }
    Ok(GaussHermite { nodes, weights })
}

/// Returns (p_q(t), p_{q-1}(t), Σ_{k<q} p_k(t)²) for the polynomials
/// orthonormal with respect to e^{-t²}.
fn orthonormal_hermite(q: usize, t: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    let mut sum_sq = 0.0;
    for k in 0..q {
        sum_sq += cur * cur;
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * t * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev, sum_sq)
}
