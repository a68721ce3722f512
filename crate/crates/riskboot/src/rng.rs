//! Reproducible stream derivation for parallel resampling.
//!
//! Every stochastic routine takes a `u64` seed. Child seeds are derived by a
//! SplitMix-style mixer from `(master, domain, index)`, and each bootstrap
//! replicate owns a disjoint ChaCha stream, so results are identical for any
//! thread count and any evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keeping unrelated consumers of one master seed apart.
pub mod domain {
    /// Cohort generation in the simulation harness.
    pub const COHORT: u64 = 1;
    /// Bootstrap replicate weights.
    pub const BOOTSTRAP: u64 = 2;
    /// Outer Monte Carlo runs of a study.
    pub const STUDY_RUN: u64 = 3;
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed from `(master, domain, index)`.
pub fn derive_seed(master: u64, domain: u64, index: u64) -> u64 {
    mix(mix(mix(master) ^ domain) ^ index)
}

/// Child seed with a two-dimensional index (e.g. study cell x run).
pub fn derive_seed2(master: u64, domain: u64, i: u64, j: u64) -> u64 {
    mix(derive_seed(master, domain, i) ^ j)
}

/// RNG for bootstrap replicate `index` under `seed`.
///
/// Stream 0 of the same seed is reserved for non-replicate draws.
pub fn replicate_stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// RNG on the reserved stream 0 of `seed`.
pub fn base_stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
