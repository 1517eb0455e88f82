//! Derivation of per-component seeds from the single global seed.
//!
//! `derive(global, component, counter)` = `splitmix64(splitmix64(global) ^ (component << 32 | counter))`,
//! where `component` is the tag of [`Component`] and `counter` is the fold
//! (or epoch/sample) index. Every random stream in a run comes from here.

/// Consumers of randomness in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Init = 1,
    Smote = 2,
    Dropout = 3,
    Shuffle = 4,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(global: u64, component: Component, counter: u32) -> u64 {
    splitmix64(splitmix64(global) ^ (((component as u64) << 32) | counter as u64))
}

/// Seed for the dropout mask of one sample in one epoch.
pub fn mask_seed(base: u64, epoch: usize, sample: usize) -> u64 {
    splitmix64(splitmix64(base ^ (epoch as u64).rotate_left(32)) ^ sample as u64)
}
