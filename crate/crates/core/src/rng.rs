//! Deterministic pseudo-random numbers.
//!
//! The generator core is xoshiro256** (Blackman & Vigna), seeded by expanding
//! a 64-bit seed through splitmix64. Constants:
//!
//! * splitmix64: increment `0x9E3779B97F4A7C15`, mixers `0xBF58476D1CE4E5B9`
//!   (shift 30) and `0x94D049BB133111EB` (shift 27), final shift 31.
//! * xoshiro256**: output `rotl(s1 * 5, 7) * 9`, state update with
//!   `t = s1 << 17` and final rotation `rotl(s3, 45)`.
//!
//! Floats in `[0, 1)` take the top 53 bits: `(x >> 11) * 2^-53`.

use crate::error::{Error, Result};

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One step of splitmix64. Advances `state` and returns the mixed output.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(SPLITMIX_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prng {
    s: [u64; 4],
    seed_register: u64,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        let mut seed_register = seed;
        let mut s = [0u64; 4];
        for word in s.iter_mut() {
            *word = splitmix64(&mut seed_register);
        }
        Prng { s, seed_register }
    }

    /// Derives an independent generator for a sub-task (a Gibbs chain, a
    /// dataset split) without disturbing this stream's future outputs.
    pub fn fork(&self, stream: u64) -> Prng {
        let mut reg = self.seed_register ^ stream.wrapping_mul(SPLITMIX_GAMMA);
        Prng::new(splitmix64(&mut reg))
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidRange { lo, hi });
        }
        let x = lo + (hi - lo) * self.next_f64();
        // lo + (hi-lo)*u can round up to hi when the range is wide.
        Ok(if x < hi { x } else { lo.max(hi - (hi - lo) * f64::EPSILON) })
    }

    /// Uniform integer in `0..n` by rejection, so there is no modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Standard normal draw (Box-Muller, no cached second value).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
