//! Deterministic seed derivation so that every stage, replicate, item and
//! worker gets its own independent stream from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a master seed with a path of tags. Different paths give unrelated
/// seeds; the same path always gives the same seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

pub fn derive_rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

/// Stage tags used with [`derive_seed`].
pub mod stage {
    pub const FEATURES: u64 = 1;
    pub const WORKERS: u64 = 2;
    pub const TRAIN_ANNOTATIONS: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const IMITATORS: u64 = 5;
    pub const TEST_LABELS: u64 = 6;
    pub const SAMPLING: u64 = 7;
    pub const TRUE_LABELS: u64 = 8;
    pub const CATALOG: u64 = 9;
}
