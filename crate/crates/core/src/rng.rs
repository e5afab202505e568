//! Named, seeded random streams.
//!
//! Every stochastic stage draws from its own stream derived from the run
//! seed and a stage tag, so enabling or disabling one stage never shifts the
//! random numbers another stage sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Child seed for `tag` under `seed`.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ fnv1a(tag)
}

/// Stream for `tag` under `seed`.
pub fn seeded(seed: u64, tag: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}
