//! Seeded pseudo-random numbers for manufactured solutions and test data.
//!
//! xorshift64* with the usual 12/25/27 shift triple and odd multiplier.
//! The generator is tiny, portable, and most importantly deterministic, so a
//! recorded seed fully reproduces every experiment.

/// xorshift64* generator.
#[derive(Debug, Clone)]
pub struct Xorshift64Star {
    state: u64,
}

impl Xorshift64Star {
    /// Seeds the generator. A zero seed would lock xorshift at zero, so it is
    /// replaced by a fixed nonzero constant.
    pub fn new(seed: u64) -> Self {
        let state = if seed == 0 { 0x9E3779B97F4A7C15 } else { seed };
        Xorshift64Star { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut s = self.state;
        s ^= s >> 12;
        s ^= s << 25;
        s ^= s >> 27;
        self.state = s;
        s.wrapping_mul(0x2545F4914F6CDD1D)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        self.next_u64() as f64 / 18446744073709551616.0
    }

    /// Uniform in [-1, 1).
    pub fn next_unit(&mut self) -> f64 {
        2.0 * self.next_f64() - 1.0
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn fill_unit(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next_unit();
        }
    }
}
