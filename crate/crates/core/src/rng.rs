//! Seeded random streams.
//!
//! Every consumer of randomness draws from a ChaCha8 stream keyed by
//! `(seed, tag, index)`, so results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(tag: &str) -> u64 {
    tag.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Independent stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(tag) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng
}

/// Derive a child seed, e.g. for a placebo refit of unit `index`.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    use rand::RngCore;
    stream(seed, tag, index).next_u64()
}
