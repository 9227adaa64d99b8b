//! Seed derivation. Every stochastic work item owns a generator seeded from
//! `(base seed, stream index)`, so results do not depend on scheduling and
//! adding work items never perturbs earlier ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stream: u64) -> u64 {
    mix(mix(base) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn stream(base: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(base, index))
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}
