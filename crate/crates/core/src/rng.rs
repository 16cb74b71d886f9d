//! Seeded randomness.
//!
//! Every random operation in the crate draws from a [`ChaCha8Rng`] seeded with
//! `seed_from_u64(seed)` and placed on an operation-specific stream, so two
//! operations sharing a user seed never share a random sequence. ChaCha8 output
//! is platform independent, which makes every seeded result reproducible
//! bit-for-bit across machines.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// Stream identifiers, one per seeded operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    BlobCenters = 1,
    BlobSamples = 2,
    Subsample = 3,
    Split = 4,
    UniformNoise = 5,
    ClassNoise = 6,
    NearCa = 7,
    FarCa = 8,
    Outliers = 9,
    Init = 10,
    Shuffle = 11,
    Evaluation = 12,
}

pub fn seeded(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Derive a child seed from a parent seed and a tag (splitmix64 over an FNV-1a hash).
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
