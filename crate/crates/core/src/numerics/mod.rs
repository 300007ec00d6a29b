//! Tensor container, deterministic RNG, and the stable softmax.

mod rng;
mod tensor;

pub use rng::RngStream;
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Softmax with max-subtraction. Never produces NaN for finite input; a
/// logit of -1e4 against a zero logit underflows to exactly 0.0, which is
/// what the fallback masking path of the score intervention relies on.
pub fn stable_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::domain("softmax input holds a non-finite value"));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// In-place softmax over one row. Caller guarantees finite, non-empty input.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for &v in row.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}
