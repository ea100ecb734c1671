//! Deterministic pseudo-random generator.
//!
//! xoshiro256** (Blackman & Vigna) seeded through SplitMix64. The algorithm
//! is fixed on purpose: identical seeds must reproduce identical draw
//! sequences on every platform, because tests and checkpoints pin exact
//! numbers.

use super::real::Real;

const TWO_POW_NEG53: f64 = 1.0 / 9007199254740992.0; // 2^-53

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Rng {
    s: [u64; 4],
    /// Cached second Box-Muller variate.
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut s = [0u64; 4];
        for slot in s.iter_mut() {
            *slot = splitmix64(&mut sm);
        }
        // xoshiro must not start from the all-zero state.
        if s == [0, 0, 0, 0] {
            s[0] = 1;
        }
        Rng { s, spare_normal: None }
    }

    /// Independent substream; `tag` distinguishes derived generators.
    pub fn derive(&self, tag: u64) -> Rng {
        let mut mix = self.s[0] ^ self.s[2].rotate_left(17) ^ tag.wrapping_mul(0x9E3779B97F4A7C15);
        Rng::new(splitmix64(&mut mix))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1).
    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG53
    }

    pub fn uniform<T: Real>(&mut self) -> T {
        T::lit(self.uniform_f64())
    }

    /// Uniform in [lo, hi).
    pub fn range<T: Real>(&mut self, lo: T, hi: T) -> T {
        lo + (hi - lo) * T::lit(self.uniform_f64())
    }

    /// Uniform integer in [0, n). Unbiased enough at the n values used here.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal_f64(&mut self) -> f64 {
        if let Some(v) = self.spare_normal.take() {
            return v;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.uniform_f64();
        let u2 = self.uniform_f64();
        let r = Float::sqrt(-2.0 * Float::ln(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        self.spare_normal = Some(r * Float::sin(theta));
        r * Float::cos(theta)
    }

    pub fn normal<T: Real>(&mut self) -> T {
        T::lit(self.normal_f64())
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<E>(&mut self, items: &mut [E]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

use num_traits::Float;
