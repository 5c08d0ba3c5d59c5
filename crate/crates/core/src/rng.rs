//! Keyed random streams.
//!
//! Each (master seed, path, step) triple gets its own Xoshiro256++ generator,
//! seeded from a SplitMix64 hash chain over the three keys. Any increment can
//! be regenerated on its own, and results do not depend on how paths are
//! scheduled across threads.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StepRng = Xoshiro256PlusPlus;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit key of one increment.
pub fn key(seed: u64, path: u64, step: u64) -> u64 {
    mix(mix(mix(seed) ^ path) ^ step.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

pub fn step_rng(seed: u64, path: u64, step: u64) -> StepRng {
    StepRng::seed_from_u64(key(seed, path, step))
}

/// Stream for auxiliary draws that must not coincide with noise streams.
pub fn aux_rng(seed: u64, tag: u64) -> StepRng {
    step_rng(seed ^ 0xa076_1d64_78bd_642f, tag, u64::MAX)
}
