//! Seed derivation for independent, reproducible random streams.

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for item `index` of stream `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(mix64(master) ^ stream) ^ index)
}

/// Maps a seed to a float in `[0, 1)`.
pub fn unit_f64(seed: u64) -> f64 {
    (mix64(seed) >> 11) as f64 / (1u64 << 53) as f64
}
