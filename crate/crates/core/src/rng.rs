//! Seeded random streams.
//!
//! Every randomized operation in the crate draws from a [`SeededRng`]. The
//! generator is ChaCha8, whose output is specified bit-for-bit and therefore
//! identical across platforms.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Deterministic random stream with uniform and Gaussian draws.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
    seed: u64,
}

/// Builds the deterministic stream for `seed`.
pub fn seeded_rng(seed: u64) -> SeededRng {
    SeededRng {
        inner: ChaCha8Rng::seed_from_u64(seed),
        seed,
    }
}

impl SeededRng {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent substream keyed by `index` (for example a layer index).
    ///
    /// The substream depends only on the parent seed and `index`, not on how
    /// much of the parent stream has been consumed.
    pub fn substream(&self, index: u64) -> SeededRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index.wrapping_add(1));
        SeededRng {
            inner: rng,
            seed: self.seed,
        }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw.
    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        self.inner.random_range(lo..=hi)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}
