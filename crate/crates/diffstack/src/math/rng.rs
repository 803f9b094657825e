//! Deterministic random streams.
//!
//! Every stream is a ChaCha12 generator (`rand_chacha::ChaCha12Rng`) seeded
//! from a 64-bit seed; normal draws use `rand_distr::Normal` (Ziggurat).
//! Identical seeds give identical draw sequences on every platform.
//! Substreams are derived by mixing a salt into the parent seed with the
//! SplitMix64 finalizer, so workers can draw independently without sharing
//! state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha12Rng,
}

/// SplitMix64 finalizer; used only for seed derivation.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream whose seed depends on (parent seed, salt) only.
    pub fn derive(&self, salt: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ splitmix64(salt)))
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        self.rng.gen_range(0..n)
    }

    /// One draw from N(mu, sigma2).
    pub fn gaussian(&mut self, mu: f64, sigma2: f64) -> f64 {
        let normal = Normal::new(mu, sigma2.sqrt()).expect("valid normal parameters");
        normal.sample(&mut self.rng)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngStream::new(123);
        let mut b = RngStream::new(123);
        for _ in 0..100 {
            assert_eq!(a.uniform(), b.uniform());
        }
    }

    #[test]
    fn derived_streams_differ_from_parent() {
        let parent = RngStream::new(5);
        let mut c1 = parent.derive(1);
        let mut c2 = parent.derive(2);
        let mut c1b = parent.derive(1);
        assert_eq!(c1.uniform(), c1b.uniform());
        assert_ne!(c1.uniform(), c2.uniform());
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = RngStream::new(9);
        let mut xs: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut xs);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
