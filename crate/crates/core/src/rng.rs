//! Deterministic randomness.
//!
//! Every random decision in the crate draws from a ChaCha8 stream seeded
//! from a single user seed. Independent sub-streams (one per sweep point and
//! repeat, one per epoch) get their own seed via [`derive_seed`], so results
//! do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type DetRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> DetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of indices into a new seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Rounds half away from zero for nonnegative inputs (`2.5 -> 3`).
pub(crate) fn round_half_up(x: f64) -> u64 {
    (x + 0.5).floor().max(0.0) as u64
}
