//! Seeded randomness: a stateless cell hash and a reproducible stream RNG.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic `ChaCha8Rng` for a seed. All sampling in the crate goes through this.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a seed and a list of integer coordinates into a uniform value in `[0, 1)`.
#[inline]
pub fn hash_unit(seed: u64, coords: &[i64]) -> f64 {
    let mut h = mix64(seed);
    for &c in coords {
        h = mix64(h ^ (c as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    }
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
