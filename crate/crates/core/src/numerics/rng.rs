//! Seeded, stream-separated random number generation.
//!
//! Every random quantity in the crate comes from a [`SeededRng`]: a ChaCha8
//! generator keyed by a 64-bit seed, with the ChaCha stream counter set to a
//! 64-bit stream id. ChaCha8 is a fixed, documented algorithm, so identical
//! `(seed, stream)` pairs produce identical bytes on every platform.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Well-known stream ids, so that independent consumers of the same seed
/// never overlap.
pub mod streams {
    pub const INIT: u64 = 0x1000;
    pub const SAMPLES: u64 = 0x2000;
    pub const TEST_SET: u64 = 0x3000;
    pub const BASIS: u64 = 0x4000;
    pub const MONTE_CARLO: u64 = 0x5000;
    pub const PROPERTY: u64 = 0x6000;
}

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh generator on a sub-stream of this one. Depends only on
    /// `(seed, stream, tag)`, never on how many values were already drawn.
    pub fn derive(&self, tag: u64) -> SeededRng {
        SeededRng::new(self.seed, mix(self.stream, tag))
    }
}

/// SplitMix64-style combination of two words; used to derive stream ids.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b)
        .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_and_stream_reproduce() {
        let mut a = SeededRng::new(42, 7);
        let mut b = SeededRng::new(42, 7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = SeededRng::new(42, 7);
        let mut b = SeededRng::new(42, 8);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn derive_ignores_consumption() {
        let base = SeededRng::new(3, 1);
        let mut used = base.clone();
        let _: f64 = used.random();
        let mut d1 = base.derive(9);
        let mut d2 = used.derive(9);
        assert_eq!(d1.next_u64(), d2.next_u64());
    }

    #[test]
    fn frozen_first_draw() {
        // Pins the generator algorithm: a change of backend would move this.
        let mut a = SeededRng::new(0, 0);
        let mut b = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(a.next_u64(), b.next_u64());
    }
}
