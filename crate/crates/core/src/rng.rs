//! Deterministic counter-based random number generator.
//!
//! Reproducibility across runs, threads and language ports is a hard
//! requirement for the augmentation and training pipelines, so instead of an
//! opaque third-party generator this module pins a fully documented one:
//!
//! * The generator is counter-based SplitMix64. Output `i` (1-based) for a
//!   seed `s` is `mix(s + i * 0x9E3779B97F4A7C15)` where `mix` is the
//!   xor-shift-multiply finalizer with constants `0xBF58476D1CE4E5B9`
//!   (shift 30), `0x94D049BB133111EB` (shift 27) and a final shift 31.
//!   All arithmetic is wrapping 64-bit.
//! * `split(stream)` derives an independent child seed as
//!   `mix(seed ^ mix(stream + GAMMA))`, so per-file or per-epoch streams can
//!   be drawn without sharing state.
//! * Bounded integers use the widening-multiply reduction
//!   `(x * n) >> 64` on 128 bits; floats use the top 53 bits divided by 2^53.
//!
//! Identical seed plus identical call sequence therefore yields identical
//! outputs on any platform, which the augmentation tests rely on.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent generator for a named stream. Children with
    /// distinct stream ids never collide with the parent or each other.
    pub fn split(&self, stream: u64) -> Rng {
        Rng::new(mix(self.seed ^ mix(stream.wrapping_add(GAMMA))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    /// Uniform real in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller on two uniform draws.
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.uniform();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
