//! Seeded, platform-independent random streams.
//!
//! Everything random in the engine (toy weights, prompt embeddings, initial
//! noise, k-means++ seeding) draws from ChaCha8 so that pinned checksums hold
//! on every target. Distinct consumers of one user seed use distinct ChaCha
//! stream ids rather than offsetting the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

/// Stream ids; one per consumer of a seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ModelWeights = 1,
    InitialNoise = 2,
    PromptToken = 3,
    KMeans = 4,
}

pub fn stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Stable 64-bit seed for a string (first eight bytes of its SHA-256, little endian).
pub fn hash_seed(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * std
        })
        .collect()
}
