//! Hierarchical seed derivation.
//!
//! Every random stream in a run is keyed by a path such as
//! `(master, purpose, round, client)`. The path is folded through the
//! splitmix64 finalizer so that neighbouring paths give unrelated seeds, and
//! the result seeds a ChaCha8 generator. No stream ever reads wall-clock
//! entropy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 increment (the 64-bit golden ratio).
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a path of words under `master` into one seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix64(master.wrapping_add(GOLDEN_GAMMA)), |acc, &p| {
            mix64(acc ^ mix64(p.wrapping_add(GOLDEN_GAMMA)))
        })
}

pub fn stream_rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

/// Stream purposes, used as the first path element.
pub mod purpose {
    pub const PAIRING: u64 = 1;
    pub const DROPOUT: u64 = 2;
    pub const DH: u64 = 3;
    pub const ROLE_COIN: u64 = 4;
    pub const COMMON_RANDOMNESS: u64 = 5;
    pub const QUANTIZE: u64 = 6;
    pub const LOCAL_TRAIN: u64 = 7;
    pub const DATA: u64 = 8;
    pub const WEIGHTS: u64 = 9;
    pub const REPLICA: u64 = 10;
    pub const INIT: u64 = 11;
    pub const ASSIGN: u64 = 12;
}
