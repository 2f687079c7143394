//! Seed splitting.
//!
//! A master seed is split into named sub-seeds as
//! `splitmix64(master ^ fnv1a64(label))`. Each consumer (particles, inner
//! Mehler nodes, tail projections, ...) asks for its own label, so changing
//! one consumer's sample count never shifts another consumer's stream.
//!
//! Streams are drawn from ChaCha8 seeded with the 64-bit sub-seed, which is
//! portable and platform independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PARTICLES: &str = "particles";
pub const INNER_MEHLER: &str = "inner-mehler";
pub const TAIL_PROJECTION: &str = "tail-projection";
pub const OUTER_POINTS: &str = "outer-points";
pub const NORMS: &str = "norms";
pub const MATRICES: &str = "matrices";
pub const MOMENT_SAMPLES: &str = "moment-samples";

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the sub-seed for `label` from `master`.
pub fn sub_seed(master: u64, label: &str) -> u64 {
    splitmix64(master ^ fnv1a64(label.as_bytes()))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
