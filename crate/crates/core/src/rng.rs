//! Stream-splittable random numbers.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed on
//! `(seed, stream)`. Trajectory `i` of a run with seed `s` always consumes
//! stream `i` of key `s`, so results do not depend on thread count or
//! scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes that get disjoint key spaces for the same user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Target = 1,
    Forward = 2,
    Backward = 3,
    Features = 4,
    FitData = 5,
    Pairs = 6,
    Bootstrap = 7,
}

/// SplitMix64 finaliser, used to derive sub-seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a label.
pub fn derive(seed: u64, label: u64) -> u64 {
    mix64(seed ^ mix64(label))
}

/// The generator for `stream` within `domain` under `seed`.
pub fn stream(seed: u64, domain: Domain, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, domain as u64));
    rng.set_stream(stream);
    rng
}
