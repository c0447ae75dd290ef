//! Deterministic random substreams.
//!
//! Every stochastic step derives its generator from `(seed, tags...)` so that the
//! result of a computation never depends on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a sequence of tags into a new 64-bit seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(seed), |acc, &tag| splitmix(acc ^ splitmix(tag)))
}

/// Generator for the substream identified by `tags`.
pub fn substream(seed: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Well-known stream tags, kept distinct so stages never share randomness.
pub mod tag {
    pub const NOISE: u64 = 1;
    pub const CLASSIFIER_INIT: u64 = 2;
    pub const CLASSIFIER_SHUFFLE: u64 = 3;
    pub const MISSING_LABELS: u64 = 4;
    pub const DENOISER_INIT: u64 = 5;
    pub const DISTILL_EPOCH: u64 = 6;
    pub const DISTILL_EVAL: u64 = 7;
    pub const CALIBRATE: u64 = 8;
    pub const SYNTH: u64 = 9;
    pub const IDN_RATES: u64 = 10;
    pub const IDN_PROJECTION: u64 = 11;
    pub const MODEL_SELECTION: u64 = 12;
}
