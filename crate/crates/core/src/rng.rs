//! Pinned deterministic generator for splits, study sampling and rater orders.
//!
//! The stream is ChaCha20 keyed with the seed's little-endian bytes (zero
//! padded to 32 bytes). Bounded draws use rejection sampling on `next_u64`
//! and shuffles are a downward Fisher-Yates. None of this goes through
//! `rand`'s distribution code, so assignments stay stable across `rand`
//! releases. Any change here must bump [`PRNG_NAME`].

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Name and version recorded in split metadata.
pub const PRNG_NAME: &str = "chacha20-fy-v1";

#[derive(Debug, Clone)]
pub struct SeededRng(ChaCha20Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        Self(ChaCha20Rng::from_seed(key))
    }

    /// Independent stream under the same seed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = Self::new(seed);
        rng.0.set_stream(stream);
        rng
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform integer in `0..bound`.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        // 2^64 mod bound; draws under this are the biased tail.
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let x = self.0.next_u64();
            if x >= threshold {
                return x % bound;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
