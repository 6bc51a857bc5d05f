//! Reproducible generator streams.
//!
//! Every Monte-Carlo work item owns a [`ChaCha8Rng`] picked out by a
//! `(base_seed, purpose, index)` triple. The base seed and the purpose tag are
//! mixed through SplitMix64 into the ChaCha key; the work-item index selects
//! one of the 2^64 ChaCha streams under that key. Two items never share a
//! stream, and the stream an item receives does not depend on how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags. Distinct tags give unrelated keys for the same base seed.
pub mod purpose {
    /// Observation paths `X_1, X_2, ...` (shared across detector kinds).
    pub const OBSERVATIONS: u64 = 0x6f62_7331;
    /// Fractional-sampling coin flips.
    pub const COIN: u64 = 0x636f_696e;
    /// Ladder walks used for `E[λ∞]`.
    pub const LADDER: u64 = 0x6c61_6464;
    /// Single-increment draws used for the undershoot constant.
    pub const INCREMENTS: u64 = 0x696e_6372;
    /// Renewal cycles of the PDC estimator.
    pub const RENEWAL: u64 = 0x7265_6e77;
    /// Stochastic dominance sampling.
    pub const DOMINANCE: u64 = 0x646f_6d69;
    /// Noise injected into count series.
    pub const NOISE: u64 = 0x6e6f_6973;
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for work item `index` of the given purpose.
pub fn stream_rng(base_seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let key = splitmix64(base_seed ^ splitmix64(purpose));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
