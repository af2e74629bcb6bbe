//! Deterministic random-stream derivation.
//!
//! Every random decision in the pipeline draws from a ChaCha stream derived
//! statelessly from a master seed plus integer tags (purpose, epoch, index).
//! Identical (seed, tags) always yield the identical stream on every
//! platform, which is what makes training runs and checkpoint resumes
//! bit-reproducible without snapshotting generator state.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The concrete RNG stream type used throughout the crate.
pub type ChaChaStream = ChaCha12Rng;

/// Stream purpose tags. Distinct tags keep unrelated consumers of the same
/// master seed statistically independent.
pub mod purpose {
    pub const DATAGEN: u64 = 0x01;
    pub const INIT: u64 = 0x02;
    pub const VIEWS: u64 = 0x03;
    pub const BATCH_ORDER: u64 = 0x04;
    pub const PROBE: u64 = 0x05;
}

/// SplitMix64 finalizer; the standard avalanche mix.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with tags into a single 64-bit stream seed.
pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix64(seed);
    for &t in tags {
        acc = splitmix64(acc ^ t.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    }
    acc
}

/// Derive an independent ChaCha stream from (seed, tags).
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(mix(seed, tags))
}

/// Sample from a normal distribution truncated to |x| <= 2*sigma
/// (resampling), used for parameter initialization.
pub fn trunc_normal(rng: &mut ChaCha12Rng, sigma: f64) -> f64 {
    use rand_distr::Distribution;
    let normal = rand_distr::Normal::new(0.0, sigma).expect("sigma > 0");
    loop {
        let x = normal.sample(rng);
        if x.abs() <= 2.0 * sigma {
            return x;
        }
    }
}
