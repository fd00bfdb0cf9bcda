//! Seeded randomness shared by all samplers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SampleRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SampleRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut SampleRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Standard normal deviate by the Box–Muller transform.
pub fn gaussian(rng: &mut SampleRng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// Point uniformly distributed on the unit sphere of dimension `n - 1`.
pub fn unit_vector(rng: &mut SampleRng, n: usize) -> alloc::vec::Vec<f64> {
    loop {
        let v: alloc::vec::Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
        let r = crate::linalg::norm(&v);
        if r > 1e-6 {
            return v.into_iter().map(|x| x / r).collect();
        }
    }
}
