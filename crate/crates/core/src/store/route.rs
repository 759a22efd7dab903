//! Key-to-slot routing.
//!
//! Slots come from XXH3-64 seeded with the store's hash seed, reduced modulo
//! the number of active strands. The seed lives in the manifest, so a key
//! maps to the same slot across restarts.

use xxhash_rust::xxh3::xxh3_64_with_seed;

pub const HASH_NAME: &str = "xxh3-64";

pub fn route(key: &[u8], seed: u64, n_active: u32) -> u32 {
    (xxh3_64_with_seed(key, seed) % n_active as u64) as u32
}
