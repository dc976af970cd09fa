//! Deterministic derivation of sub-seeds, so independent jobs (trials,
//! strikes, grid cells) can run in any order — or in parallel — and still
//! reproduce bit-identical results.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A sub-seed for stream `stream` of the run seeded by `base`.
pub fn derive(base: u64, stream: u64) -> u64 {
    mix(base.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream.wrapping_add(1))))
}

/// Two-level derivation, e.g. (run, die, strike).
pub fn derive2(base: u64, a: u64, b: u64) -> u64 {
    derive(derive(base, a), b)
}
