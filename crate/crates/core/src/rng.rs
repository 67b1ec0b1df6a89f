//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 generator (RFC 7539 block function reduced to 8
//! rounds, as implemented by `rand_chacha`) whose 256-bit key is derived from a
//! 64-bit root seed and a path of 64-bit labels:
//!
//! ```text
//! h = seed
//! for label in path: h = splitmix64(h ^ splitmix64(label))
//! key[i] = splitmix64(h + i * 0x9E3779B97F4A7C15)   for i in 0..4, little-endian
//! ```
//!
//! A substream therefore depends only on `(seed, path)`, never on the order in
//! which other substreams were consumed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Stream = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a label path into a 64-bit key.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |h, &label| splitmix64(h ^ splitmix64(label)))
}

pub fn substream(seed: u64, path: &[u64]) -> Stream {
    let h = derive_key(seed, path);
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(h.wrapping_add((i as u64).wrapping_mul(GOLDEN))).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Stream labels used across the crate; keeps purposes from colliding.
pub mod label {
    pub const HOLES: u64 = 0x686f6c6573;
    pub const DEPTH: u64 = 0x6465707468;
    pub const CLUTTER: u64 = 0x636c757474;
    pub const SUBSAMPLE: u64 = 0x7375627361;
    pub const SCENE: u64 = 0x7363656e65;
    pub const NOISE: u64 = 0x6e6f697365;
    pub const ABC: u64 = 0x616263;
    pub const MASK: u64 = 0x6d61736b;
    pub const BACKGROUND: u64 = 0x626b67;
}

#[inline]
pub fn uniform(rng: &mut Stream) -> f64 {
    rng.random::<f64>()
}

#[inline]
pub fn uniform_range(rng: &mut Stream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

#[inline]
pub fn normal(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}

#[inline]
pub fn index(rng: &mut Stream, n: usize) -> usize {
    rng.random_range(0..n)
}
