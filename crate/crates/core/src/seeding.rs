//! Stable seed fan-out. Every random stream in the crate is a ChaCha8
//! generator seeded from a global seed and a string key, so results do not
//! depend on thread scheduling, platform or std's hasher.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the key bytes.
fn fnv1a(key: &str) -> u64 {
    key.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a sub-seed for `key` from `seed`.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    splitmix64(splitmix64(seed) ^ fnv1a(key))
}

pub fn rng_for(seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, key))
}
