//! Seeded pseudo-random numbers with a fixed, portable algorithm.
//!
//! The generator is SplitMix64: the state is a 64-bit counter advanced by
//! `0x9e3779b97f4a7c15` per draw and passed through the splitmix64 finalizer.
//! Everything else is derived from `next_u64` as follows, so any
//! implementation following these rules reproduces the same streams:
//!
//! * `new(seed)`: the state is `seed` itself.
//! * `derive(seed, stream)`: state = `mix(seed ^ mix(stream))`, where
//!   `mix(x)` is the first output of a generator whose state is `x`.
//! * `uniform()`: `(next_u64 >> 11) · 2⁻⁵³`, in `[0, 1)`.
//! * `below(n)`: `(next_u64 · n) >> 64` (128-bit multiply).
//! * `normal()`: Box–Muller on `u1 = 1 − uniform()`, `u2 = uniform()`;
//!   yields `r·cos(θ)` and caches `r·sin(θ)` for the next call.
//! * `shuffle`: Fisher–Yates from the last index down, `j = below(i + 1)`.

use rand_core::{Rng as _, SeedableRng};
use rand_xoshiro::SplitMix64;

/// Well-known stream ids for [`Rng::derive`].
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DATA_TRAIN: u64 = 3;
    pub const DATA_VAL: u64 = 4;
}

#[derive(Debug, Clone)]
pub struct Rng {
    inner: SplitMix64,
    spare_normal: Option<f64>,
}

fn mix(x: u64) -> u64 {
    SplitMix64::from_seed(x.to_le_bytes()).next_u64()
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: SplitMix64::from_seed(seed.to_le_bytes()),
            spare_normal: None,
        }
    }

    /// An independent stream keyed by `(seed, stream)`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        Rng::new(mix(seed ^ mix(stream)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
