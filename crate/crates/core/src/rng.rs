//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 seeded with a 64-bit seed and
//! a stream number. Distinct purposes use distinct streams of the same seed, and
//! derived seeds (per trial, per policy-iteration step) come from
//! [`derive_seed`]. Runs are bitwise reproducible across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream of the state-action-successor draws of a sample batch.
pub const STREAM_SAMPLES: u64 = 0;
/// Stream of the irrelevant-feature noise in the rows of `Φ`.
pub const STREAM_FEATURES: u64 = 1;
/// Stream of the irrelevant-feature noise in the rows of `Φ'`.
pub const STREAM_FEATURES_NEXT: u64 = 2;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer of `seed` combined with `index`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
