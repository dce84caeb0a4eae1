//! Deterministic random number generation.
//!
//! Everything stochastic in this crate flows through [`SeededRng`], a
//! ChaCha12 generator addressed by `(seed, path)`. The `path` is a mixed
//! 64-bit tag selecting an independent stream, which lets callers hand out
//! per-step / per-sample generators whose output does not depend on how work
//! is batched or which thread runs it. Normal deviates use Box-Muller on top
//! of the uniform stream with `libm` transcendentals, so sequences are
//! bit-identical across platforms.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::numerics::vector::Vector;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A seeded, stream-addressable random number generator.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    path: u64,
    inner: ChaCha12Rng,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::with_path(seed, 0)
    }

    fn with_path(seed: u64, path: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(path);
        SeededRng {
            seed,
            path,
            inner,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child stream. Chaining tags
    /// (`rng.child(a).child(b)`) mixes them into a fresh path, so a tree of
    /// purposes (step, slot, draw kind) maps to statistically independent
    /// streams of the same seed.
    pub fn child(&self, tag: u64) -> SeededRng {
        let path = splitmix64(self.path ^ splitmix64(tag));
        Self::with_path(self.seed, path)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`; safe to pass to `ln`.
    fn uniform_pos(&mut self) -> f64 {
        1.0 - self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is meaningless");
        (self.next_u64() % n as u64) as usize
    }

    /// One standard normal deviate (Box-Muller).
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let r = libm::sqrt(-2.0 * libm::log(self.uniform_pos()));
        let theta = TWO_PI * self.uniform();
        self.spare_normal = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    /// A vector of `dim` i.i.d. standard normal deviates.
    pub fn gaussian(&mut self, dim: usize) -> Result<Vector> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "gaussian draw needs dim >= 1".to_string(),
            ));
        }
        Ok(Vector::from_vec(
            (0..dim).map(|_| self.standard_normal()).collect(),
        ))
    }
}
