//! Keyed random streams and the samplers used by the bootstrap and the
//! simulation harness.
//!
//! A stream is identified by `(master seed, replicate, stage)`. The key is
//! mixed into a ChaCha8 seed, so replicate `b` produces the same draws no
//! matter which worker evaluates it or in which order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::NumericsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub master: u64,
    pub replicate: u64,
    pub stage: u64,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    key: StreamKey,
    rng: ChaCha8Rng,
}

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and an index.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    mix64(mix64(parent) ^ mix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

impl RngStream {
    pub fn new(master: u64, replicate: u64, stage: u64) -> Self {
        Self::from_key(StreamKey { master, replicate, stage })
    }

    pub fn from_key(key: StreamKey) -> Self {
        let mut seed = [0u8; 32];
        let mut state = mix64(key.master) ^ 0x5851_F42D_4C95_7F2D;
        for (i, word) in [key.master, key.replicate, key.stage, 0x243F_6A88_85A3_08D3].iter().enumerate() {
            state = mix64(state ^ word.rotate_left(17 * i as u32));
            seed[i * 8..(i + 1) * 8].copy_from_slice(&state.to_le_bytes());
        }
        Self { key, rng: ChaCha8Rng::from_seed(seed) }
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Gamma(shape, rate) draw; mean shape/rate.
pub fn sample_gamma<R: RngCore + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> Result<f64, NumericsError> {
    if !(shape > 0.0 && shape.is_finite() && rate > 0.0 && rate.is_finite()) {
        return Err(NumericsError::Domain(format!("gamma needs shape>0, rate>0; got ({shape}, {rate})")));
    }
    let dist = Gamma::new(shape, 1.0 / rate).map_err(|e| NumericsError::Domain(e.to_string()))?;
    Ok(dist.sample(rng))
}

pub fn sample_poisson<R: RngCore + ?Sized>(rng: &mut R, mean: f64) -> Result<u64, NumericsError> {
    if mean == 0.0 {
        return Ok(0);
    }
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(NumericsError::Domain(format!("poisson mean must be finite and >= 0, got {mean}")));
    }
    let dist = Poisson::new(mean).map_err(|e| NumericsError::Domain(e.to_string()))?;
    Ok(dist.sample(rng) as u64)
}

pub fn sample_normal<R: RngCore + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> Result<f64, NumericsError> {
    if !(sd >= 0.0 && sd.is_finite() && mean.is_finite()) {
        return Err(NumericsError::Domain(format!("normal needs finite mean and sd >= 0; got ({mean}, {sd})")));
    }
    let z: f64 = StandardNormal.sample(rng);
    Ok(mean + sd * z)
}

pub fn sample_binomial<R: RngCore + ?Sized>(rng: &mut R, trials: u64, p: f64) -> Result<u64, NumericsError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(NumericsError::Domain(format!("binomial p must be in [0,1], got {p}")));
    }
    let dist = Binomial::new(trials, p).map_err(|e| NumericsError::Domain(e.to_string()))?;
    Ok(dist.sample(rng))
}
