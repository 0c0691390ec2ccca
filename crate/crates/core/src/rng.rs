//! Seeded randomness.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from a
//! `u64`. Independent streams derived from one run seed go through
//! [`derive_seed`], a SplitMix64 mix of the base seed and a stream label.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a sub-seed for the stream named `label`.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = base;
    for b in label.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
