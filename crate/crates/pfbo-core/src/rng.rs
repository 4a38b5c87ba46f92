//! Deterministic seed derivation.
//!
//! Every stochastic routine takes an explicit `u64` seed; nested components
//! derive decorrelated child seeds with [`derive_seed`] so that a run is
//! reproducible bit for bit and parallel workers never share a stream.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;

/// SplitMix64 finalizer; good avalanche, stable across platforms.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Mix a parent seed with a sequence of tags (component id, epoch, item, ...).
pub fn derive_seed(parent: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix(parent);
    for &t in tags {
        s = splitmix(s ^ t.wrapping_mul(0xD6E8FEB86659FD93));
    }
    s
}

pub fn rng_from(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
