//! Seeded random streams.
//!
//! Every stochastic operation takes a caller-owned [`Rng`]. Workers and
//! batches that need their own stream derive a seed from a base seed and an
//! index with [`derive_seed`], so results depend only on the base seed and
//! the work partition, never on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash of `(base, index)` used as the seed of an independent sub-stream.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn derived(base: u64, index: u64) -> Rng {
    seeded(derive_seed(base, index))
}
