//! Reproducible random stream.
//!
//! Every random draw in the crate comes from [`SplitMix64`] so datasets can be regenerated
//! bit-exactly from a 64-bit seed in any language:
//!
//! ```text
//! state  += 0x9E3779B97F4A7C15
//! z       = state
//! z       = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z       = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! output  = z ^ (z >> 31)
//! ```
//!
//! Derived draws:
//! - `next_f64`: `(next_u64 >> 11) * 2^-53`, uniform in `[0, 1)`.
//! - `uniform(a, b)`: `a + (b - a) * next_f64`.
//! - `range_inclusive(lo, hi)`: `lo + next_u64 % (hi - lo + 1)`.
//! - `gaussian()`: Box–Muller, `sqrt(-2 ln(1 - u1)) * cos(2π u2)`, one value per two draws.
//! - `fork(tag)`: a new stream seeded with `mix(next_u64 ^ tag)`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

/// The SplitMix64 output function applied to a single value.
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines several words into one seed, order-sensitively.
pub fn seed_from(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x5EED_u64, |acc, w| mix(acc.wrapping_add(GOLDEN) ^ *w))
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        let span = hi - lo;
        if span == u64::MAX {
            return self.next_u64();
        }
        lo + self.next_u64() % (span + 1)
    }

    pub fn index(&mut self, len: usize) -> usize {
        self.range_inclusive(0, len as u64 - 1) as usize
    }

    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn fork(&mut self, tag: u64) -> SplitMix64 {
        SplitMix64::new(mix(self.next_u64() ^ tag))
    }
}
