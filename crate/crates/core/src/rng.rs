//! Portable seeded random stream.
//!
//! The generator is xoshiro256** seeded by expanding a 64-bit seed with
//! SplitMix64 (the reference seeding procedure from the xoshiro authors).
//! Uniform reals take the top 53 bits of each output: `(x >> 11) * 2^-53`,
//! which lands in `[0, 1)`. Any implementation that follows these three rules
//! reproduces every draw bit for bit.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

pub const ALGORITHM: &str = "xoshiro256**/splitmix64";

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct RandomStream {
    inner: Xoshiro256StarStar,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    /// Independent stream for item `index` under `seed`. The derived seed is
    /// `splitmix64(seed ^ splitmix64(index))`.
    pub fn substream(seed: u64, index: u64) -> Self {
        Self::new(splitmix64(seed ^ splitmix64(index)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi]`; exactly `lo` when the range is empty.
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        let u = self.uniform();
        if hi == lo {
            lo
        } else {
            lo + (hi - lo) * u
        }
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `0..n` by rejection-free multiply-shift.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher–Yates shuffle, drawing `below(i + 1)` for `i` from the end.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
