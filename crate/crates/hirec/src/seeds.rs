//! Deterministic seed derivation.
//!
//! Every random stream in an experiment is keyed by (master seed, purpose
//! tag, index) so that replications are independent, reproducible, and
//! stable under reordering: adding a stream never shifts any other stream's
//! seed. Tags are hashed with 64-bit FNV-1a; the combination is mixed with
//! the SplitMix64 finalizer, both fixed, platform-independent functions.

/// SplitMix64 finalizer: a bijective avalanche mix on 64 bits.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Seed for the `index`-th stream of purpose `tag` under `master`.
pub fn derive(master: u64, tag: &str, index: u64) -> u64 {
    mix(mix(master ^ fnv1a(tag)) ^ index)
}
