//! Deterministic random streams.
//!
//! One 64-bit master seed drives every randomized operation. Each identity
//! gets an independent stream keyed by `(master_seed, fnv1a64(identity_id))`
//! through ChaCha8, a counter-based generator, so per-identity draws do not
//! depend on how identities are scheduled across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::fnv::fnv1a64;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stream for one identity: ChaCha8 keyed by a SplitMix64 mix of the master
/// seed and the FNV-1a hash of the identity id.
pub fn identity_stream(master_seed: u64, identity_id: &str) -> ChaCha8Rng {
    let key = splitmix64(splitmix64(master_seed) ^ fnv1a64(identity_id.as_bytes()));
    ChaCha8Rng::seed_from_u64(key)
}

/// Stream for dataset-level draws (global sampling, pair sampling).
pub fn master_stream(master_seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(master_seed))
}
