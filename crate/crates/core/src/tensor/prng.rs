use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::Real;

/// Seeded xoshiro256++ stream.
///
/// The 64-bit seed is expanded to the 256-bit state with SplitMix64, so a
/// given seed yields the same stream on every platform.
#[derive(Debug, Clone)]
pub struct Prng {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform index in `0..n` (Lemire's multiply-shift; bias is below 2^-64·n).
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Derives an independent child stream, e.g. one per parameter block.
    pub fn fork(&mut self) -> Prng {
        Prng::new(self.next_u64())
    }

    /// Fisher–Yates shuffle of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            p.swap(i, j);
        }
        p
    }
}

/// `len` values drawn uniformly from `[-scale, scale)`.
pub fn init_params<T: Real>(prng: &mut Prng, len: usize, scale: f64) -> Vec<T> {
    assert!(scale >= 0.0, "init scale must be non-negative");
    (0..len)
        .map(|_| T::of(prng.uniform(-scale, scale)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<f64> = init_params(&mut Prng::new(7), 64, 1.0);
        let b: Vec<f64> = init_params(&mut Prng::new(7), 64, 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let a: Vec<f64> = init_params(&mut Prng::new(1), 16, 1.0);
        let b: Vec<f64> = init_params(&mut Prng::new(2), 16, 1.0);
        assert!(a.iter().zip(&b).any(|(x, y)| x != y));
    }

    #[test]
    fn values_respect_scale() {
        let v: Vec<f32> = init_params(&mut Prng::new(3), 10_000, 0.1);
        assert!(v.iter().all(|x| (-0.1..=0.1).contains(x)));
    }

    #[test]
    fn stream_is_pinned() {
        // Frozen first output for seed 1; guards against silent generator changes.
        assert_eq!(Prng::new(1).next_u64(), 14971601782005023387);
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut p = Prng::new(9).permutation(100);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }
}
