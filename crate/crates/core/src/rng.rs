//! SplitMix64, the single PRNG used by every randomized stage.
//!
//! Mappings from the raw 64-bit stream:
//!
//! * uniform real in `[0, 1)`: top 53 bits times 2^-53
//! * integer in `[0, n)`: multiply-shift, `(x as u128 * n as u128) >> 64`
//! * Bernoulli(p): `next_f64() < p`
//!
//! These mappings are part of the reproducibility contract; changing any of
//! them changes every generated dataset.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent child generator for a numbered sub-task (image index,
    /// fold index, ...). The child depends only on `(seed, stream)`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut parent = Self::new(seed ^ mix(stream.wrapping_add(GOLDEN_GAMMA)));
        Self::new(parent.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be non-zero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform real in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
