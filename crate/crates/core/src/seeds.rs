//! Derived RNG seeds.
//!
//! Every randomized task (a split, a permutation, a replication) owns a seed
//! computed from the master seed and the task's coordinates, so results do not
//! depend on the order or the thread in which tasks run.

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the task at `path` under `master`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |h, &tag| splitmix64(h ^ splitmix64(tag.wrapping_add(0xA5A5_A5A5))))
}
