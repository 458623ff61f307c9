//! splitmix64 generator shared by corpus generation, initialization,
//! shuffling, noise and sampling.
//!
//! Every derived draw is defined in terms of [`Rng::next_u64`] so that another
//! implementation following the same rules reproduces corpora and runs
//! bit-for-bit.

use serde::{Deserialize, Serialize};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// `next_u64() / 2^64`, in `[0, 1]` (1.0 only through rounding of the top 2^10 outputs).
    pub fn uniform01(&mut self) -> f64 {
        self.next_u64() as f64 / TWO_POW_64
    }

    /// Standard normal via Box–Muller, cosine branch only: consumes exactly
    /// two uniforms per call (more only if the first is exactly zero).
    pub fn gaussian(&mut self) -> f64 {
        let mut u1 = self.uniform01();
        while u1 <= 0.0 {
            u1 = self.uniform01();
        }
        let u2 = self.uniform01();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform index in `0..n` as `floor(uniform01 · n)`, clamped to `n − 1`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.uniform01() * n as f64) as usize).min(n - 1)
    }

    /// True with probability `p`.
    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform01() < p
    }

    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }

    /// Fisher–Yates, swapping position `i` (from the end) with `below(i + 1)`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Independent stream derived from this generator's seed and a salt,
    /// without advancing `self`.
    pub fn fork(&self, salt: u64) -> Rng {
        let mut mixer = Rng::new(self.state ^ salt.wrapping_mul(GOLDEN_GAMMA));
        Rng::new(mixer.next_u64())
    }
}
