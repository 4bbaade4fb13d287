//! Seeded, splittable random streams.
//!
//! Every stochastic draw in the simulator goes through [`SimRng`], a thin
//! wrapper over ChaCha8 whose output is identical across platforms. Child
//! streams are derived by hashing `(seed, stream id)` so that independent
//! consumers (world noise, latency jitter, replay sampling) never share state.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stream label.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(mix64(seed) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Stream labels used across the crate.
pub mod stream {
    pub const WORLD: u64 = 1;
    pub const LATENCY: u64 = 2;
    pub const POLICY: u64 = 3;
    pub const REPLAY: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SCENARIO: u64 = 6;
    pub const PERCEPTION: u64 = 7;
    pub const EPISODE: u64 = 8;
    pub const CLASSIFIER: u64 = 9;
    pub const HELDOUT: u64 = 10;
    pub const FUSION: u64 = 11;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimRng {
    inner: ChaCha8Rng,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        SimRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Child stream determined by `(seed, stream)`; does not touch `self`.
    pub fn derived(seed: u64, stream: u64) -> Self {
        SimRng::new(derive_seed(seed, stream))
    }

    /// Split off an independent stream, advancing `self` by one draw.
    pub fn split(&mut self) -> Self {
        SimRng::new(mix64(self.inner.next_u64()))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Gaussian with the given variance. Zero variance returns `mean` exactly
    /// without consuming a draw.
    pub fn gaussian(&mut self, mean: f64, variance: f64) -> f64 {
        if variance == 0.0 {
            return mean;
        }
        mean + variance.sqrt() * self.standard_normal()
    }

    /// `k` distinct indices from `0..n`, uniformly.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, k).into_vec()
    }

    pub fn as_rng(&mut self) -> &mut impl Rng {
        &mut self.inner
    }
}
