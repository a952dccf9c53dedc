//! Seeded point samplers shared by construction-time checks and tests.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

/// Seed used by construction-time spot checks of declared constants.
pub const CHECK_SEED: u64 = 0x5eed_b1d0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent RNG stream `stream` for `seed`, so adding draws on one stream
/// never shifts another.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// SplitMix64 finalizer; derives well-spread child seeds from a master seed.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn uniform_box<R: Rng>(rng: &mut R, dim: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.random_range(lo..hi))
}

pub fn gaussian<R: Rng>(rng: &mut R, dim: usize, sigma: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    })
}

/// Uniform point on the open probability simplex, with every coordinate at
/// least `floor` (rejection-free: mixes a Dirichlet(1) draw with the barycenter).
pub fn simplex_interior<R: Rng>(rng: &mut R, dim: usize, floor: f64) -> DVector<f64> {
    let e: DVector<f64> = DVector::from_fn(dim, |_, _| Exp1.sample(rng));
    let s = e.sum();
    let w = 1.0 - dim as f64 * floor;
    e.map(|v| floor + w * v / s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_points_are_normalized_and_floored() {
        let mut r = rng(1);
        for _ in 0..100 {
            let x = simplex_interior(&mut r, 5, 1e-3);
            assert!((x.sum() - 1.0).abs() < 1e-12);
            assert!(x.iter().all(|&v| v >= 1e-3));
        }
    }

    #[test]
    fn streams_are_independent_of_each_other() {
        let a: f64 = rng_stream(7, 1).random();
        let b: f64 = rng_stream(7, 2).random();
        let a2: f64 = rng_stream(7, 1).random();
        assert_eq!(a, a2);
        assert_ne!(a, b);
    }
}
