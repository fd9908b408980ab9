//! Seeded inputs shared by the benchmarks.

use depfusion_core::pgmf::{Psn, DEFAULT_PSN_KERNEL};
use depfusion_core::ssm::{Discretization, SelectiveSsm};
use depfusion_core::{FeatureMap, Prng, Shape, TokenSeq};

pub const CHANNELS: usize = 4;

/// Most-square `h × w = n`.
pub fn grid(n: usize) -> (usize, usize) {
    let mut h = (n as f64).sqrt() as usize;
    while h > 1 && n % h != 0 {
        h -= 1;
    }
    (h.max(1), n / h.max(1))
}

pub fn feature_map(n: usize, seed: u64) -> FeatureMap<f64> {
    let (h, w) = grid(n);
    FeatureMap::random(Shape::new(1, CHANNELS, h, w), &mut Prng::new(seed), 1.0)
}

pub fn image(side: usize, seed: u64) -> FeatureMap<f64> {
    FeatureMap::random(Shape::new(1, 3, side, side), &mut Prng::new(seed), 1.0)
}

pub fn tokens(n: usize, seed: u64) -> TokenSeq<f64> {
    let mut prng = Prng::new(seed);
    TokenSeq::new(CHANNELS, (0..n * CHANNELS).map(|_| prng.uniform(-1.0, 1.0)).collect()).expect("whole tokens")
}

pub fn scores(n: usize, seed: u64) -> Vec<f64> {
    let mut prng = Prng::new(seed);
    (0..n).map(|_| prng.uniform(-1.0, 1.0)).collect()
}

pub fn psn(seed: u64) -> Psn<f64> {
    Psn::random(CHANNELS, DEFAULT_PSN_KERNEL, &mut Prng::new(seed)).expect("odd kernel")
}

pub fn ssm_pair(seed: u64) -> (SelectiveSsm<f64>, SelectiveSsm<f64>) {
    let mut prng = Prng::new(seed);
    (
        SelectiveSsm::random(CHANNELS, 4, Discretization::Zoh, &mut prng),
        SelectiveSsm::random(CHANNELS, 4, Discretization::Zoh, &mut prng),
    )
}
