//! Deterministic seed derivation.
//!
//! Every random draw in the crate flows from an explicit u64 seed through
//! these mixers, so reruns are bit-identical across platforms and thread
//! counts.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby integer inputs.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Combines a base seed with a stream discriminator (sample index,
/// epoch counter, purpose tag) into an independent seed.
#[inline]
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// FNV-1a hash of a string; used to key per-parameter RNG streams by name.
#[inline]
pub fn hash_name(name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministic RNG for a (seed, stream) pair.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, stream))
}

/// Deterministic RNG for a named stream under a base seed.
pub fn rng_for_name(seed: u64, name: &str) -> ChaCha8Rng {
    rng_for(seed, hash_name(name))
}
