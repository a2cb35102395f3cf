//! Seed plumbing. Every random stream is a ChaCha8 generator keyed by a
//! derived seed, so generation order never leaks between components.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Tags for independent random streams derived from one base seed.
pub mod stream {
    pub const TRAIN_SPLIT: u64 = 0x7472_6169_6e00_0001;
    pub const VAL_SPLIT: u64 = 0x7661_6c00_0000_0002;
    pub const TEST_SPLIT: u64 = 0x7465_7374_0000_0003;
    pub const INIT: u64 = 0x696e_6974_0000_0004;
    pub const SAMPLING: u64 = 0x7361_6d70_0000_0005;
    pub const FRESH: u64 = 0x6672_6573_6800_0006;
}

/// SplitMix64 finaliser over `base ^ tag`.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = (base ^ tag).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for item `index` of the stream keyed by `seed`.
pub fn indexed(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
