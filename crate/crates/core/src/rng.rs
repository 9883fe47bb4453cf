//! Seeded random streams.
//!
//! Every sampler in the crate takes an explicit seed. Grid cells derive their
//! own seed from `(master_seed, cell_index)` so a sweep produces the same
//! numbers whether cells run serially or on a thread pool.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used project-wide.
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for substream `index` of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}
