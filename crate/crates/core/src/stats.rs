//! Paired inference over matched generations.
//!
//! Scores are paired by (prompt_id, seed): a condition's score is only ever
//! compared with the baseline score produced from the same prompt and the
//! same initial latent. Pairing is verified, never repaired; misaligned
//! inputs are an error, not something to sort into agreement.
//!
//! Uncertainty comes from a percentile bootstrap over per-prompt deltas
//! (nearest-rank percentiles, one child stream per resample so results do
//! not depend on evaluation order). The paired t-test is the secondary
//! check; its p-value runs through the regularized incomplete beta, so no
//! statistics dependency is needed.

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Identity of one generation; two scores may be differenced only when
/// their keys are equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairKey {
    pub prompt_id: u64,
    pub seed: u64,
}

/// Per-pair deltas `cond - base`. Inputs must already be aligned: same
/// length, equal keys at every position.
pub fn paired_diffs(cond: &[(PairKey, f64)], base: &[(PairKey, f64)]) -> Result<Vec<f64>> {
    if cond.len() != base.len() {
        return Err(Error::pairing(format!(
            "sample counts differ: {} vs {}",
            cond.len(),
            base.len()
        )));
    }
    if cond.is_empty() {
        return Err(Error::pairing("no pairs given"));
    }
    let mut out = Vec::with_capacity(cond.len());
    for (i, ((kc, vc), (kb, vb))) in cond.iter().zip(base).enumerate() {
        if kc != kb {
            return Err(Error::pairing(format!(
                "pair {i} mismatch: {kc:?} vs {kb:?}"
            )));
        }
        if !vc.is_finite() || !vb.is_finite() {
            return Err(Error::domain(format!("pair {i} holds a non-finite score")));
        }
        out.push(vc - vb);
    }
    Ok(out)
}

fn check_samples(samples: &[f64]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::domain("empty sample vector"));
    }
    if !samples.iter().all(|v| v.is_finite()) {
        return Err(Error::domain("sample vector holds a non-finite value"));
    }
    Ok(())
}

/// Resampled means, one child stream per resample. Order of the output is
/// the resample index, independent of any parallelism in the caller.
fn bootstrap_means(samples: &[f64], n_resamples: usize, stream: &RngStream) -> Result<Vec<f64>> {
    check_samples(samples)?;
    if n_resamples == 0 {
        return Err(Error::domain("need at least one resample"));
    }
    // A constant vector resamples to itself; computing the mean by summation
    // would smear the constant by accumulated rounding.
    let first = samples[0];
    if samples.iter().all(|&v| v == first) {
        return Ok(vec![first; n_resamples]);
    }
    let n = samples.len();
    let inv = 1.0 / n as f64;
    let mut means = Vec::with_capacity(n_resamples);
    for b in 0..n_resamples {
        let mut draw = stream.child_indexed("resample", b as u64);
        let mut acc = 0.0;
        for _ in 0..n {
            acc += samples[draw.uniform_index(n)?];
        }
        means.push(acc * inv);
    }
    Ok(means)
}

/// Nearest-rank percentile of a sorted slice: the ceil(q * n)-th smallest.
fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Percentile bootstrap CI for the mean at the given coverage level.
pub fn bootstrap_ci(
    samples: &[f64],
    n_resamples: usize,
    level: f64,
    stream: &RngStream,
) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&level) || level <= 0.0 {
        return Err(Error::domain(format!("level {level} outside (0, 1)")));
    }
    let mut means = bootstrap_means(samples, n_resamples, stream)?;
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite means"));
    let tail = (1.0 - level) / 2.0;
    Ok((nearest_rank(&means, tail), nearest_rank(&means, 1.0 - tail)))
}

/// Two-sided paired t-test p-value for mean zero. Zero-variance samples use
/// the convention p = 1 when the common value is zero, p = 0 otherwise.
pub fn paired_t_test(samples: &[f64]) -> Result<f64> {
    check_samples(samples)?;
    let n = samples.len();
    if n < 2 {
        return Err(Error::domain("paired t-test needs at least 2 samples"));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let ss: f64 = samples.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    if sd == 0.0 {
        return Ok(if mean == 0.0 { 1.0 } else { 0.0 });
    }
    let t = mean / (sd / (n as f64).sqrt());
    student_t_two_sided(t, n - 1)
}

/// Two-sided tail probability of Student's t via the regularized
/// incomplete beta: p = I_{v/(v+t^2)}(v/2, 1/2).
pub fn student_t_two_sided(t: f64, dof: usize) -> Result<f64> {
    if dof == 0 {
        return Err(Error::domain("t-test degrees of freedom must be positive"));
    }
    if !t.is_finite() {
        return Err(Error::domain("t statistic must be finite"));
    }
    let v = dof as f64;
    regularized_incomplete_beta(v / 2.0, 0.5, v / (v + t * t))
}

const LANCZOS_G: [f64; 8] = [
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function (Lanczos, g = 7).
fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the approximation on its accurate branch.
        let pi = std::f64::consts::PI;
        (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = 0.999_999_999_999_809_93;
        for (i, c) in LANCZOS_G.iter().enumerate() {
            acc += c / (x + (i + 1) as f64);
        }
        let t = x + 7.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

/// Continued-fraction kernel of the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-14;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(Error::domain(format!("beta parameters must be positive: a={a}, b={b}")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("beta argument {x} outside [0, 1]")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cf(a, b, x) / a)
    } else {
        Ok(1.0 - front * beta_cf(b, a, 1.0 - x) / b)
    }
}

/// Holm step-down adjustment. Output order matches input order.
pub fn holm_correction(p_values: &[f64]) -> Result<Vec<f64>> {
    if p_values.is_empty() {
        return Err(Error::domain("no p-values to adjust"));
    }
    for &p in p_values {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("p-value {p} outside [0, 1]")));
        }
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        p_values[a]
            .partial_cmp(&p_values[b])
            .expect("finite p-values")
            .then(a.cmp(&b))
    });
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0_f64;
    for (i, &idx) in order.iter().enumerate() {
        let scaled = ((m - i) as f64 * p_values[idx]).min(1.0);
        running = running.max(scaled);
        adjusted[idx] = running;
    }
    Ok(adjusted)
}

/// Summary of one paired contrast.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedStat {
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Two-sided paired t p-value; None when n < 2.
    pub p_t: Option<f64>,
    /// One-sided bootstrap p for the alternative "mean < 0", mid-p
    /// convention with add-one smoothing.
    pub p_one_sided_neg: f64,
    pub n_resamples: usize,
    pub resample_seed: u64,
}

/// Bootstrap + t summary of a delta vector.
pub fn paired_stat(
    deltas: &[f64],
    n_resamples: usize,
    level: f64,
    stream: &RngStream,
) -> Result<PairedStat> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("level {level} outside (0, 1)")));
    }
    let means = bootstrap_means(deltas, n_resamples, stream)?;
    let mut sorted = means.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite means"));
    let tail = (1.0 - level) / 2.0;
    let ci_low = nearest_rank(&sorted, tail);
    let ci_high = nearest_rank(&sorted, 1.0 - tail);
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    let p_t = if deltas.len() >= 2 {
        Some(paired_t_test(deltas)?)
    } else {
        None
    };
    // Mid-p: resampled means above zero count fully against "mean < 0",
    // exact zeros count half, plus one smoothing pseudo-count.
    let above = means.iter().filter(|&&m| m > 0.0).count() as f64;
    let at_zero = means.iter().filter(|&&m| m == 0.0).count() as f64;
    let p_one = (above + 0.5 * at_zero + 1.0) / (n_resamples as f64 + 1.0);
    Ok(PairedStat {
        n: deltas.len(),
        mean,
        ci_low,
        ci_high,
        p_t,
        p_one_sided_neg: p_one.min(1.0),
        n_resamples,
        resample_seed: stream.seed(),
    })
}

/// Difference-of-differences between a sink condition and its matched
/// random control.
#[derive(Debug, Clone, PartialEq)]
pub struct DoDResult {
    /// Per-pair d_i = sink_delta_i - rand_delta_i.
    pub per_item: Vec<f64>,
    /// Summary of the d_i; `stat.mean` is the difference of differences.
    pub stat: PairedStat,
}

/// d_i = (sink_i - base_i) - (rand_i - base_i), given the two delta vectors
/// already paired against the same baseline.
pub fn diff_of_diffs(
    sink_deltas: &[(PairKey, f64)],
    rand_deltas: &[(PairKey, f64)],
    n_resamples: usize,
    level: f64,
    stream: &RngStream,
) -> Result<DoDResult> {
    let per_item = paired_diffs(sink_deltas, rand_deltas)?;
    let stat = paired_stat(&per_item, n_resamples, level, stream)?;
    Ok(DoDResult { per_item, stat })
}

/// Dose trend: per-pair difference between the specificity gap at a high
/// budget and at the reference budget.
pub fn trend_test(
    d_high: &[(PairKey, f64)],
    d_reference: &[(PairKey, f64)],
    n_resamples: usize,
    level: f64,
    stream: &RngStream,
) -> Result<PairedStat> {
    let deltas = paired_diffs(d_high, d_reference)?;
    paired_stat(&deltas, n_resamples, level, stream)
}

/// Verdict of an equivalence check against a symmetric margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Equivalence {
    /// CI lies inside [-margin, margin].
    Equivalent,
    /// CI crosses a margin boundary.
    Boundary,
    /// CI lies entirely outside the margin on one side.
    Exceeds,
}

impl Equivalence {
    pub fn name(self) -> &'static str {
        match self {
            Equivalence::Equivalent => "equivalent",
            Equivalence::Boundary => "boundary",
            Equivalence::Exceeds => "exceeds",
        }
    }
}

/// Classify a CI against a symmetric margin around zero.
pub fn equivalence_check(ci_low: f64, ci_high: f64, margin: f64) -> Result<Equivalence> {
    if !margin.is_finite() || margin <= 0.0 {
        return Err(Error::domain(format!("margin {margin} must be positive")));
    }
    if !ci_low.is_finite() || !ci_high.is_finite() || ci_low > ci_high {
        return Err(Error::domain(format!("invalid CI [{ci_low}, {ci_high}]")));
    }
    if ci_low > -margin && ci_high < margin {
        Ok(Equivalence::Equivalent)
    } else if ci_low > margin || ci_high < -margin {
        Ok(Equivalence::Exceeds)
    } else {
        // An endpoint sitting exactly on the margin counts as boundary.
        Ok(Equivalence::Boundary)
    }
}
