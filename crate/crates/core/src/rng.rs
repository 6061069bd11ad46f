//! Deterministic, splittable random streams.
//!
//! A stream is identified by a global seed and a path of indices (for
//! instance replicate, group, margin). The same `(seed, path)` always yields
//! the same sequence, whichever thread draws from it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Covariate margin of a group.
pub const MARGIN_X: u64 = 0;
/// Response margin of a group.
pub const MARGIN_Y: u64 = 1;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `(seed, path)` into a single 64-bit value.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |h, p| splitmix64(h ^ splitmix64(p.wrapping_add(0xD1B5_4A32_D192_ED03))))
}

/// Independent ChaCha8 stream for `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(derive_seed(seed, path));
    rng
}
