// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seed derivation and the portable random source.
//!
//! Every stochastic step draws from a `Xoshiro256PlusPlus` stream seeded via
//! [`derive_seed`]. Gaussian draws use the basic Box–Muller transform so that
//! generated data is bit-reproducible across platforms:
//!
//! ```text
//! u1 = (next_u64 >> 11) * 2^-53, redrawn while u1 == 0
//! u2 = (next_u64 >> 11) * 2^-53
//! z0 = sqrt(-2 ln u1) * cos(2 pi u2)
//! z1 = sqrt(-2 ln u1) * sin(2 pi u2)
//! ```

use rand::RngCore;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of stream indices (fold, instance, ...).
pub fn derive_seed(seed: u64, stream: &[u64]) -> u64 {
    stream
        .iter()
        .fold(splitmix64(seed), |acc, &s| splitmix64(acc ^ splitmix64(s)))
}

pub fn rng_from(seed: u64, stream: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Uniform double in `[0, 1)` with 53 random bits.
#[inline]
pub fn unit_f64(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Box–Muller standard normal source that caches the second variate.
#[derive(Debug, Clone)]
pub struct Gaussian {
    rng: Rng,
    spare: Option<f64>,
}

impl Gaussian {
    pub fn new(rng: Rng) -> Self {
        Self { rng, spare: None }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let mut u1 = unit_f64(&mut self.rng);
        while u1 == 0.0 {
            u1 = unit_f64(&mut self.rng);
        }
        let u2 = unit_f64(&mut self.rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn rng_mut(&mut self) -> &mut Rng {
        &mut self.rng
    }
}
