//! Seeded, platform-independent random source.
//!
//! The generator is xoshiro256** (Blackman & Vigna) seeded through
//! SplitMix64, both with their published constant sets frozen here. All
//! draws are pure integer/float arithmetic on 64-bit words, so identical
//! seeds and call sequences produce identical results on every platform.
//!
//! A single `Rng` must not be shared across threads; derive independent
//! streams with [`Rng::child`] instead.

use crate::error::{Error, Result};

const SPLITMIX_GAMMA: u64 = 0x9e3779b97f4a7c15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(SPLITMIX_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic pseudo-random generator.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    state: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { seed, state }
    }

    /// Seed this generator was constructed with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for a sub-task. Children of the same parent with
    /// different tags are uncorrelated; the derivation is value-based, so it
    /// does not disturb the parent's draw sequence.
    pub fn child(&self, tag: u64) -> Rng {
        let mut sm = self.seed ^ tag.wrapping_mul(SPLITMIX_GAMMA);
        Rng::new(splitmix64(&mut sm))
    }

    /// Core xoshiro256** step.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let result = self.state[1]
            .wrapping_mul(5)
            .rotate_left(7)
            .wrapping_mul(9);
        let t = self.state[1] << 17;
        self.state[2] ^= self.state[0];
        self.state[3] ^= self.state[1];
        self.state[1] ^= self.state[2];
        self.state[0] ^= self.state[3];
        self.state[2] ^= t;
        self.state[3] = self.state[3].rotate_left(45);
        result
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw via the Box-Muller transform.
    pub fn normal01(&mut self) -> f64 {
        // u must be strictly positive for the logarithm.
        let u = 1.0 - self.uniform01();
        let v = self.uniform01();
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }

    /// Uniform integer in {0, .., k-1}.
    pub fn below(&mut self, k: u64) -> Result<u64> {
        if k == 0 {
            return Err(Error::Domain("below(k) requires k >= 1".into()));
        }
        Ok(self.below_nonzero(k))
    }

    /// Unbiased bounded draw by rejection sampling.
    #[inline]
    fn below_nonzero(&mut self, k: u64) -> u64 {
        debug_assert!(k > 0);
        let threshold = k.wrapping_neg() % k; // 2^64 mod k
        loop {
            let v = self.next_u64();
            if v >= threshold {
                return v % k;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below_nonzero(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
