//! Seeded random streams with deterministic forking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Reserved fork key for the stream that draws the shared starting noise.
pub const TRUNK_KEY: u64 = u64::MAX;

/// Reserved fork key for goal sampling during prediction.
pub const GOAL_KEY: u64 = u64::MAX - 1;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A reproducible source of standard-normal and uniform draws.
///
/// Children created with [`NoiseStream::fork`] depend only on the parent's
/// seed and the key, never on how many values the parent has drawn.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fork(&self, key: u64) -> Self {
        Self::new(splitmix64(self.seed ^ splitmix64(key.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.gen_range(lo..=hi)
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = NoiseStream::new(7);
        let mut b = NoiseStream::new(7);
        assert_eq!(a.normals(16), b.normals(16));
    }

    #[test]
    fn forks_ignore_parent_position() {
        let a = NoiseStream::new(3);
        let mut b = NoiseStream::new(3);
        b.normals(5);
        assert_eq!(a.fork(2).normals(8), b.fork(2).normals(8));
        assert_ne!(a.fork(2).normals(8), a.fork(3).normals(8));
        assert_ne!(a.fork(0).normals(8), NoiseStream::new(3).normals(8));
    }
}
