//! Seeded randomness. All stochastic steps draw from an explicitly passed
//! [`Rng`]; nothing in the crate touches a global generator.

use rand::{Rng as _, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// The PRNG used throughout: xoshiro256++.
pub type Rng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Draws a child seed, used to give each utterance in a batch its own
/// independent stream regardless of evaluation order.
pub fn child_seed(rng: &mut Rng) -> u64 {
    rng.gen()
}

/// Uniform draw in `[-scale, scale]`.
pub fn uniform(rng: &mut Rng, scale: f64) -> f64 {
    rng.gen_range(-scale..=scale)
}
