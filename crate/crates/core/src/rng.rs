//! Keyed PRNG streams.
//!
//! Every random decision in the pipeline draws from a ChaCha8 stream whose
//! seed is a mix of the run seed, a purpose tag and one or two counters, so
//! that e.g. the negatives drawn for user 17 in repeat 3 never depend on how
//! many other users were evaluated first.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const TAG_INIT: u64 = 0x1;
pub const TAG_DROPOUT: u64 = 0x2;
pub const TAG_NEGATIVE: u64 = 0x3;
pub const TAG_SHUFFLE: u64 = 0x4;
pub const TAG_EVAL: u64 = 0x5;
pub const TAG_SWEEP: u64 = 0x6;
pub const TAG_SYNTH: u64 = 0x7;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a 64-bit seed from a base seed, a tag and two counters.
pub fn derive_seed(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ tag);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(17))
}

pub fn stream(seed: u64, tag: u64, a: u64, b: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, a, b))
}
