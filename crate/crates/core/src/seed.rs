//! Seed derivation. Every random stream in the crate is keyed by a tuple of
//! integers so results never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix(seed: u64, key: u64) -> u64 {
    splitmix(seed ^ splitmix(key))
}

pub fn mix3(seed: u64, a: u64, b: u64) -> u64 {
    mix(mix(seed, a), b)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
