//! Counter-based random streams.
//!
//! A stream is a 64-bit key plus a draw counter. Draw `n` is
//! `mix(key + (n + 1) · γ)`, the SplitMix64 output function evaluated at an
//! arbitrary counter, so any position can be reached in O(1) and two streams
//! with the same key and position always agree.
//!
//! Draw accounting:
//! - [`RandomStream::next_u64`] and [`RandomStream::next_f64`] consume one
//!   counter position.
//! - [`RandomStream::next_gaussian`] consumes exactly two (Box-Muller, cosine
//!   branch only), so Gaussian `k` of a fresh stream lives at positions `2k`
//!   and `2k + 1`.
//!
//! Independent sub-streams (per worker, per noise cell) are keyed by
//! [`derive_seed`], which folds a master seed and a list of indices through
//! the same mixer.

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Draws consumed by one standard-normal sample.
pub const DRAWS_PER_GAUSSIAN: u64 = 2;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a master seed together with a sequence of indices into a new seed.
///
/// Used to give each (worker | noise source, sample, repeat) cell its own
/// stream without any shared state.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(seed ^ GOLDEN_GAMMA), |h, &p| {
        mix64(h.wrapping_add(GOLDEN_GAMMA) ^ mix64(p.wrapping_add(0x6a09_e667_f3bc_c909)))
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomStream {
    seed: u64,
    key: u64,
    position: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream {
            seed,
            key: mix64(seed),
            position: 0,
        }
    }

    /// Stream keyed by `derive_seed(seed, parts)`.
    pub fn derived(seed: u64, parts: &[u64]) -> Self {
        RandomStream::new(derive_seed(seed, parts))
    }

    /// Sub-stream for worker `index`, following the `derive_seed` rule.
    pub fn split(&self, index: u64) -> Self {
        RandomStream::derived(self.seed, &[index])
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn seek(&mut self, position: u64) {
        self.position = position;
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.position = self.position.wrapping_add(1);
        mix64(
            self.key
                .wrapping_add(self.position.wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[low, high)`.
    #[inline]
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.next_f64()
    }

    /// Uniform integer in `0..n`, `n > 0`. Uses a widening multiply; the bias
    /// is below 2^-32 for the sizes used here.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    #[inline]
    pub fn next_gaussian(&mut self) -> f64 {
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// `n` independent standard-normal draws.
    pub fn gaussian(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_gaussian()).collect()
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.next_gaussian();
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
