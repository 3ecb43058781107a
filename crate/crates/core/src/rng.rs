//! Seeded, splittable random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by `(seed, index)`; the ChaCha
//! stream id separates theta draws from data draws, so the randomization
//! consumed by the ranks never depends on how much data was generated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Substream {
    Theta = 1,
    Data = 2,
    Haar = 3,
}

/// Generator for substream `which` of replication `index` under `seed`.
pub fn substream(seed: u64, index: u64, which: Substream) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(which as u64);
    rng
}
