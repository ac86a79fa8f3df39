//! Seeded random number generation.
//!
//! All randomness (weight init, shuffling, synthetic fixtures) flows through
//! [`Prng`], a thin wrapper over ChaCha8. ChaCha output is specified
//! bit-for-bit, so a seed reproduces the same stream on every platform.
//! Child generators are derived with [`Prng::split`], which draws a fresh
//! 64-bit seed from the parent; this keeps independent consumers (e.g. weight
//! init vs. data shuffling) decoupled from each other's draw counts.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct Prng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child generator.
    pub fn split(&mut self) -> Prng {
        Prng::new(self.inner.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.inner.gen::<f32>()
    }

    pub fn uniform_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.gen::<f64>()
    }

    pub fn normal(&mut self) -> f32 {
        let z: f64 = StandardNormal.sample(&mut self.inner);
        z as f32
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
