//! Shared numeric kernel: special functions, quadrature rules, keyed RNG
//! streams with samplers, and dense solves.

pub mod hermite;
pub mod linalg;
pub mod rng;
pub mod special;

pub use hermite::{gauss_hermite, GaussHermite};
pub use rng::{derive_seed, sample_binomial, sample_gamma, sample_normal, sample_poisson, RngStream, StreamKey};
pub use special::{digamma, ln_gamma, log_gamma, trigamma};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("matrix is singular or not invertible at the requested point")]
    Singular,
}
