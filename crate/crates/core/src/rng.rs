//! Seed derivation. Every random stream in the crate is keyed by a base seed
//! and a short tuple of integers, so any stream can be rebuilt in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_SAMPLE: u64 = 1;
pub const STREAM_UE: u64 = 2;
pub const STREAM_SPLIT: u64 = 3;
pub const STREAM_ENCODER: u64 = 4;
pub const STREAM_DECODER: u64 = 5;
pub const STREAM_SHUFFLE: u64 = 6;
pub const STREAM_TASK: u64 = 7;
pub const STREAM_GATE: u64 = 8;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into `base` one word at a time.
pub fn mix(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0x632b_e59b_d9b4_e019))))
}

/// Seed of sample `index` of task `task_id`.
pub fn sample_seed(base: u64, task_id: usize, index: usize) -> u64 {
    mix(base, &[STREAM_SAMPLE, task_id as u64, index as u64])
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
