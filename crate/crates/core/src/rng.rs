//! Seeded random streams.
//!
//! Every stochastic step draws from a ChaCha stream keyed by a master seed and
//! a path of integer tags (epoch, batch, anchor, ...). Streams for different
//! tag paths are independent, so work can be split across threads without
//! changing any draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a tag path.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix64(seed), |acc, &t| {
        mix64(acc ^ mix64(t.wrapping_add(0x5851_F42D_4C95_7F2D)))
    })
}

/// A stream seeded directly from `seed`.
pub fn stream(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// A stream for the tag path `tags` under `seed`.
pub fn substream(seed: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tags))
}
