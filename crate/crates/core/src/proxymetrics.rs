//! Proxy scoring of generated images and features.
//!
//! These are deliberately cheap stand-ins with the same *shape* as the real
//! perceptual stack: a text-alignment score (cosine through a fixed seeded
//! projection), a multi-scale pixel distance, and a diagonal-covariance
//! Frechet shift between feature populations. Every score is labeled with
//! [`METRIC_PROVENANCE`] so downstream tables can never be mistaken for
//! published-model numbers.

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

/// Tag carried by every metric row this module produces.
pub const METRIC_PROVENANCE: &str = "proxy";

/// Seed for the fixed projections. Never derived from run seeds: the same
/// projection must score every run of every experiment.
const PROJECTION_SEED: u64 = 0x70726F6A; // ASCII "proj"

/// Output dimension of [`feature_projection`].
pub const FEATURE_DIM: usize = 16;

/// Scores attached to one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricBundle {
    pub alignment: f64,
    /// Multi-scale pixel distance to the paired baseline image; None for
    /// the baseline condition itself.
    pub perceptual_vs_baseline: Option<f64>,
    /// Projected feature vector, input to population-level Frechet shifts.
    pub features: Vec<f64>,
}

fn projection_matrix(label: &str, rows: usize, cols: usize) -> Tensor {
    let mut stream = RngStream::new(PROJECTION_SEED)
        .child(label)
        .child_indexed("rows", rows as u64)
        .child_indexed("cols", cols as u64);
    let bound = 1.0 / (cols as f64).sqrt();
    Tensor::random_uniform(vec![rows, cols], &mut stream, -bound, bound)
        .expect("projection bounds are finite")
}

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (m, n) = (w.rows(), w.cols());
    debug_assert_eq!(n, x.len());
    let mut out = vec![0.0; m];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (a, &b) in w.row(i).iter().zip(x) {
            acc += a * b;
        }
        *o = acc;
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine alignment between pooled image features and the mean text-token
/// feature, both passed through the same fixed projection.
pub fn alignment_proxy(pooled: &[f64], text_features: &Tensor) -> Result<f64> {
    if pooled.is_empty() {
        return Err(Error::domain("empty pooled feature vector"));
    }
    if text_features.ndim() != 2 || text_features.rows() == 0 {
        return Err(Error::shape("text features must be a non-empty 2-D tensor"));
    }
    let d = pooled.len();
    if text_features.cols() != d {
        return Err(Error::shape(format!(
            "text feature width {} != pooled width {d}",
            text_features.cols()
        )));
    }
    let n = text_features.rows();
    let mut text_mean = vec![0.0; d];
    for r in 0..n {
        for (acc, &v) in text_mean.iter_mut().zip(text_features.row(r)) {
            *acc += v;
        }
    }
    let inv = 1.0 / n as f64;
    for v in &mut text_mean {
        *v *= inv;
    }
    let w = projection_matrix("alignment", d, d);
    let u = matvec(&w, pooled);
    let v = matvec(&w, &text_mean);
    let nu = dot(&u, &u).sqrt();
    let nv = dot(&v, &v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::degenerate("zero-norm projected feature vector"));
    }
    Ok(dot(&u, &v) / (nu * nv))
}

/// Fixed projection of pooled features into the population-metric space.
pub fn feature_projection(pooled: &[f64]) -> Result<Vec<f64>> {
    if pooled.is_empty() {
        return Err(Error::domain("empty pooled feature vector"));
    }
    let w = projection_matrix("features", FEATURE_DIM, pooled.len());
    Ok(matvec(&w, pooled))
}

fn check_image(t: &Tensor) -> Result<usize> {
    if t.ndim() != 3 || t.shape()[2] != 3 || t.shape()[0] != t.shape()[1] {
        return Err(Error::shape(format!(
            "image must be square [P, P, 3], got {:?}",
            t.shape()
        )));
    }
    let p = t.shape()[0];
    if p == 0 || p % 4 != 0 {
        return Err(Error::shape(format!(
            "image side {p} must be a positive multiple of 4"
        )));
    }
    Ok(p)
}

/// Mean absolute pixel difference at one box-downsample factor.
fn scale_diff(a: &Tensor, b: &Tensor, p: usize, factor: usize) -> f64 {
    let q = p / factor;
    let inv_block = 1.0 / (factor * factor) as f64;
    let mut total = 0.0;
    for y in 0..q {
        for x in 0..q {
            for c in 0..3 {
                let mut sa = 0.0;
                let mut sb = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        let idx = (((y * factor + dy) * p) + (x * factor + dx)) * 3 + c;
                        sa += a.data()[idx];
                        sb += b.data()[idx];
                    }
                }
                total += (sa * inv_block - sb * inv_block).abs();
            }
        }
    }
    total / (q * q * 3) as f64
}

/// Multi-scale perceptual proxy: mean absolute pixel difference averaged
/// over full resolution, 2x, and 4x box downsamples. Identical images give
/// exactly 0.0.
pub fn perceptual_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    let pa = check_image(a)?;
    let pb = check_image(b)?;
    if pa != pb {
        return Err(Error::shape(format!("image sides differ: {pa} vs {pb}")));
    }
    let d1 = scale_diff(a, b, pa, 1);
    let d2 = scale_diff(a, b, pa, 2);
    let d4 = scale_diff(a, b, pa, 4);
    Ok((d1 + d2 + d4) / 3.0)
}

/// Diagonal-covariance Frechet shift between two feature populations:
/// squared mean distance plus per-dimension (sqrt(var_a) - sqrt(var_b))^2.
/// The sqrt-difference form makes identical populations score exactly 0.0.
pub fn frechet_shift(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("empty feature population"));
    }
    let d = a[0].len();
    if d == 0 {
        return Err(Error::domain("zero-dimensional features"));
    }
    if a.iter().chain(b.iter()).any(|v| v.len() != d) {
        return Err(Error::shape("feature dimensions disagree across the populations"));
    }
    let stats = |set: &[Vec<f64>]| -> (Vec<f64>, Vec<f64>) {
        let n = set.len() as f64;
        let mut mean = vec![0.0; d];
        for v in set {
            for (m, &x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for v in set {
            for ((s, &x), &m) in var.iter_mut().zip(v).zip(&mean) {
                let dev = x - m;
                *s += dev * dev;
            }
        }
        for s in &mut var {
            *s /= n;
        }
        (mean, var)
    };
    let (ma, va) = stats(a);
    let (mb, vb) = stats(b);
    let mut total = 0.0;
    for i in 0..d {
        let dm = ma[i] - mb[i];
        let ds = va[i].sqrt() - vb[i].sqrt();
        total += dm * dm + ds * ds;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_of_identical_directions_is_one() {
        let pooled: Vec<f64> = (0..8).map(|i| 0.3 * i as f64 - 1.0).collect();
        let text = Tensor::new(vec![1, 8], pooled.clone()).unwrap();
        let c = alignment_proxy(&pooled, &text).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alignment_is_scale_invariant_and_bounded() {
        let mut s = RngStream::new(44);
        for _ in 0..50 {
            let pooled: Vec<f64> = (0..16).map(|_| s.uniform(-2.0, 2.0).unwrap()).collect();
            let text =
                Tensor::random_uniform(vec![4, 16], &mut s, -2.0, 2.0).unwrap();
            let c = alignment_proxy(&pooled, &text).unwrap();
            assert!((-1.0..=1.0).contains(&c));
            let doubled: Vec<f64> = pooled.iter().map(|v| v * 2.0).collect();
            let c2 = alignment_proxy(&doubled, &text).unwrap();
            assert_eq!(c.to_bits(), c2.to_bits());
        }
    }

    #[test]
    fn alignment_uses_mean_text_row() {
        let pooled = vec![1.0, 0.0, 0.0, 0.0];
        // Two text rows whose mean equals pooled.
        let text = Tensor::new(
            vec![2, 4],
            vec![2.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0],
        )
        .unwrap();
        let c = alignment_proxy(&pooled, &text).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alignment_rejects_degenerate_and_misshaped_input() {
        let text = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            alignment_proxy(&[0.0, 0.0, 0.0], &text),
            Err(Error::Degenerate(_))
        ));
        assert!(alignment_proxy(&[], &text).is_err());
        assert!(alignment_proxy(&[1.0, 2.0], &text).is_err());
        let zero_text = Tensor::zeros(vec![2, 3]);
        assert!(matches!(
            alignment_proxy(&[1.0, 2.0, 3.0], &zero_text),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn projection_is_fixed_across_calls() {
        let pooled = vec![0.5; 12];
        let f1 = feature_projection(&pooled).unwrap();
        let f2 = feature_projection(&pooled).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(f1.len(), FEATURE_DIM);
    }

    #[test]
    fn perceptual_distance_of_identical_images_is_exactly_zero() {
        let mut s = RngStream::new(60);
        let img = Tensor::random_uniform(vec![32, 32, 3], &mut s, 0.0, 1.0).unwrap();
        assert_eq!(perceptual_distance(&img, &img).unwrap(), 0.0);
    }

    #[test]
    fn perceptual_distance_of_single_pixel_bump() {
        // A lone bump of height delta contributes delta / (P*P*3) at every
        // scale (block mean shrinks by f^2, pixel count shrinks by the
        // same), so the three-scale mean is also delta / (P*P*3).
        let a = Tensor::zeros(vec![32, 32, 3]);
        let mut b = Tensor::zeros(vec![32, 32, 3]);
        let delta = 0.75;
        b.data_mut()[(5 * 32 + 9) * 3 + 1] = delta;
        let got = perceptual_distance(&a, &b).unwrap();
        let expect = delta / (32.0 * 32.0 * 3.0);
        assert!((got - expect).abs() < 1e-15, "{got} vs {expect}");
        // Symmetry.
        assert_eq!(got, perceptual_distance(&b, &a).unwrap());
    }

    #[test]
    fn perceptual_distance_shape_errors() {
        let a = Tensor::zeros(vec![32, 32, 3]);
        assert!(perceptual_distance(&a, &Tensor::zeros(vec![16, 16, 3])).is_err());
        assert!(perceptual_distance(&a, &Tensor::zeros(vec![32, 32])).is_err());
        assert!(perceptual_distance(&a, &Tensor::zeros(vec![32, 16, 3])).is_err());
        let odd = Tensor::zeros(vec![6, 6, 3]);
        assert!(perceptual_distance(&odd, &odd).is_err());
    }

    #[test]
    fn frechet_shift_identity_is_exactly_zero() {
        let mut s = RngStream::new(71);
        let pop: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..16).map(|_| s.uniform(-3.0, 3.0).unwrap()).collect())
            .collect();
        assert_eq!(frechet_shift(&pop, &pop).unwrap(), 0.0);
    }

    #[test]
    fn frechet_shift_pure_mean_offset() {
        let a = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
        let b = vec![vec![3.0, 4.0], vec![5.0, 6.0]];
        // Means differ by (3, 4), variances match: 9 + 16 = 25 exactly.
        assert_eq!(frechet_shift(&a, &b).unwrap(), 25.0);
    }

    #[test]
    fn frechet_shift_pure_spread_offset() {
        // Same mean 0; per-dim std 1 vs 3: (1-3)^2 * 2 dims = 8.
        let a = vec![vec![1.0, 1.0], vec![-1.0, -1.0]];
        let b = vec![vec![3.0, 3.0], vec![-3.0, -3.0]];
        assert_eq!(frechet_shift(&a, &b).unwrap(), 8.0);
    }

    #[test]
    fn frechet_shift_input_errors() {
        let ok = vec![vec![1.0, 2.0]];
        assert!(frechet_shift(&[], &ok).is_err());
        assert!(frechet_shift(&ok, &[]).is_err());
        let ragged = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(frechet_shift(&ok, &ragged).is_err());
        let wrong_dim = vec![vec![1.0, 2.0, 3.0]];
        assert!(frechet_shift(&ok, &wrong_dim).is_err());
    }
}
