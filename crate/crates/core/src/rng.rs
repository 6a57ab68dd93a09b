//! Seed derivation for reproducible, schedule-independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream from a root seed and a tuple of salts.
///
/// Each salt is folded in through the mixer, so `(seed, a, b)` and
/// `(seed, b, a)` give unrelated streams.
pub fn derive(seed: u64, salts: &[u64]) -> Rng {
    let mut s = mix64(seed);
    for &salt in salts {
        s = mix64(s ^ salt);
    }
    Rng::seed_from_u64(s)
}

/// Stream-purpose tags so that different subsystems never share a stream.
pub(crate) mod tag {
    pub const WALK_INIT: u64 = 0x5741_4c4b_494e_4954;
    pub const WALK_REPAIR: u64 = 0x5741_4c4b_5245_5052;
    pub const EMBED_INIT: u64 = 0x454d_4245_4449_4e49;
    pub const EMBED_TRAIN: u64 = 0x454d_4245_4454_524e;
    pub const FNN_INIT: u64 = 0x464e_4e49_4e49_5400;
    pub const BATCH: u64 = 0x4241_5443_4800_0000;
    pub const SYNTH: u64 = 0x5359_4e54_4800_0000;
    pub const BENCH: u64 = 0x4245_4e43_4800_0000;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derive_is_deterministic_and_order_sensitive() {
        let a: u64 = derive(7, &[1, 2]).random();
        let b: u64 = derive(7, &[1, 2]).random();
        let c: u64 = derive(7, &[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
