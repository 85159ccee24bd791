//! Named, seeded random streams.
//!
//! Each noise source and each stochastic algorithm step draws from its own
//! ChaCha stream, derived from `(seed, stream, index)`. Streams never share
//! state, so runs are reproducible regardless of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers. Values are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Measurement = 1,
    Disturbance = 2,
    InitialDesign = 3,
    Acquisition = 4,
    Hyperparameters = 5,
    ExperimentSeed = 6,
}

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for `stream`, sub-indexed by `index` (e.g. BO iteration).
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(index)));
    rng.set_stream(stream as u64);
    rng
}

/// Deterministic per-experiment seed for iteration `index` of a campaign.
pub fn experiment_seed(campaign_seed: u64, index: u64) -> u64 {
    mix64(mix64(campaign_seed ^ (Stream::ExperimentSeed as u64).rotate_left(32)) ^ index)
}
