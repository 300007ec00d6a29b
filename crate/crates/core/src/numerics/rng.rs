//! Counter-based splittable random stream.
//!
//! Output at position `c` is a pure function of `(seed, c)`: the SplitMix64
//! finalizer applied to `seed + (c+1) * GOLDEN`. There is no hidden state, so
//! a stream can be replayed from any point and two streams never share a
//! buffer. Child streams are derived from the parent seed plus a label, which
//! gives every (prompt, layer, step, purpose) site its own independent stream
//! without coordination.

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer. Full-avalanche 64-bit mix.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic counter-based generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit draws consumed so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    /// Child stream for an independent purpose. Same parent + same label
    /// always yields the same child; different labels yield unrelated seeds.
    pub fn child(&self, label: &str) -> RngStream {
        let mut h = self.seed ^ 0xA076_1D64_78BD_642F;
        for &b in label.as_bytes() {
            h = mix64(h ^ u64::from(b));
        }
        RngStream::new(mix64(h))
    }

    /// Child stream addressed by label and index (e.g. one per prompt).
    pub fn child_indexed(&self, label: &str, index: u64) -> RngStream {
        let base = self.child(label);
        RngStream::new(mix64(base.seed ^ mix64(index.wrapping_mul(GOLDEN))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 * SCALE
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::domain("uniform bounds must be finite"));
        }
        if !(lo < hi) {
            return Err(Error::domain(format!(
                "uniform requires lo < hi, got [{lo}, {hi})"
            )));
        }
        Ok(lo + (hi - lo) * self.next_f64())
    }

    /// Uniform index in [0, n) via the multiply-shift reduction.
    pub fn uniform_index(&mut self, n: usize) -> Result<usize> {
        if n == 0 {
            return Err(Error::domain("uniform_index requires n > 0"));
        }
        let wide = u128::from(self.next_u64()) * (n as u128);
        Ok((wide >> 64) as usize)
    }

    /// Standard normal via Box-Muller. Consumes exactly two draws; u1 is
    /// offset half a step into (0, 1) so the log never sees zero.
    pub fn standard_normal(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        let u1 = ((self.next_u64() >> 11) as f64 + 0.5) * SCALE;
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
