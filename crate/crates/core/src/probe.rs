//! Attention-concentration measurements.
//!
//! Everything here consumes row-stochastic attention matrices (one per head)
//! or per-token incoming-mass vectors derived from them. Incoming mass of
//! token j is the column mean of the attention matrix: the average attention
//! that all queries pay to j. A sink is a token whose incoming mass ranks in
//! the top k at a given (layer, step, head) site.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Row-sum slack tolerated before a matrix is rejected as non-stochastic.
const ROW_SUM_TOL: f64 = 1e-9;

/// Entropy floor: probabilities are clamped here before taking logs so that
/// exact zeros contribute a vanishing positive term instead of NaN.
pub const ENTROPY_CLAMP: f64 = 1e-12;

/// How sink positions were chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinkProtocol {
    /// Top-k of each head's own incoming-mass vector.
    PerHead,
    /// Top-k of the head-averaged incoming-mass vector, shared by all heads.
    UnionBudget,
    /// Equal-budget uniform draw without replacement (control).
    Random,
    /// Fixed positions 0..k regardless of mass (negative control).
    Index0Proxy,
}

impl SinkProtocol {
    pub fn name(self) -> &'static str {
        match self {
            SinkProtocol::PerHead => "per-head",
            SinkProtocol::UnionBudget => "union-budget",
            SinkProtocol::Random => "random",
            SinkProtocol::Index0Proxy => "index0-proxy",
        }
    }
}

/// Sink positions selected at one attention site.
///
/// `head` is the head index, or -1 when the set is shared across heads
/// (union-budget, random, index0-proxy). `indices` is sorted ascending and
/// duplicate-free; `k` is its length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SinkSet {
    pub layer: usize,
    pub step: usize,
    pub head: i32,
    pub k: usize,
    pub indices: Vec<usize>,
    pub protocol: SinkProtocol,
}

impl SinkSet {
    pub fn new(
        layer: usize,
        step: usize,
        head: i32,
        indices: Vec<usize>,
        protocol: SinkProtocol,
    ) -> Result<Self> {
        let sorted = indices.windows(2).all(|w| w[0] < w[1]);
        if !sorted {
            return Err(Error::contract("sink indices must be sorted and unique"));
        }
        Ok(SinkSet {
            layer,
            step,
            head,
            k: indices.len(),
            indices,
            protocol,
        })
    }
}

/// Per-site probe readings for one head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub layer: usize,
    pub step: usize,
    pub head: usize,
    pub incoming_mass: Vec<f64>,
    pub entropy_per_query: Vec<f64>,
    pub top5_concentration: f64,
}

/// Max / 95th-percentile token norms at a block output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationStats {
    pub max_norm: f64,
    pub p95_norm: f64,
}

/// Sink positions split by modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModalitySplit {
    pub image: usize,
    pub text: usize,
}

fn check_row_stochastic(a: &Tensor) -> Result<()> {
    if a.ndim() != 2 || a.rows() != a.cols() {
        return Err(Error::shape("attention matrix must be square 2-D"));
    }
    for r in 0..a.rows() {
        let sum: f64 = a.row(r).iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::contract(format!(
                "attention row {r} sums to {sum}, not 1"
            )));
        }
        if a.row(r).iter().any(|&v| v < 0.0) {
            return Err(Error::contract(format!("attention row {r} has a negative entry")));
        }
    }
    Ok(())
}

/// Incoming mass per token: column means of a row-stochastic matrix.
pub fn incoming_mass(attention: &Tensor) -> Result<Vec<f64>> {
    check_row_stochastic(attention)?;
    Ok(column_means(attention, 0..attention.rows()))
}

/// Incoming mass restricted to a contiguous block of query rows. Diagnostic
/// variant: answers "who do the image queries attend to" without text rows
/// diluting the average.
pub fn incoming_mass_over_queries(
    attention: &Tensor,
    queries: std::ops::Range<usize>,
) -> Result<Vec<f64>> {
    check_row_stochastic(attention)?;
    if queries.start >= queries.end || queries.end > attention.rows() {
        return Err(Error::domain(format!(
            "query range {queries:?} out of bounds for {} rows",
            attention.rows()
        )));
    }
    Ok(column_means(attention, queries))
}

fn column_means(a: &Tensor, rows: std::ops::Range<usize>) -> Vec<f64> {
    let n = a.cols();
    let count = rows.len();
    let mut mass = vec![0.0; n];
    for r in rows {
        for (m, &v) in mass.iter_mut().zip(a.row(r)) {
            *m += v;
        }
    }
    let inv = 1.0 / count as f64;
    for m in &mut mass {
        *m *= inv;
    }
    mass
}

/// Indices of the k largest entries. Ties break toward the lower index; the
/// result is sorted ascending.
pub fn topk_sinks(mass: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > mass.len() {
        return Err(Error::domain(format!(
            "top-k budget {k} out of range for {} tokens",
            mass.len()
        )));
    }
    if !mass.iter().all(|v| v.is_finite()) {
        return Err(Error::domain("mass vector holds a non-finite value"));
    }
    let mut order: Vec<usize> = (0..mass.len()).collect();
    order.sort_by(|&a, &b| {
        mass[b]
            .partial_cmp(&mass[a])
            .expect("finite mass")
            .then(a.cmp(&b))
    });
    let mut top: Vec<usize> = order.into_iter().take(k).collect();
    top.sort_unstable();
    Ok(top)
}

/// Shared sink set under a single budget: top-k of the head-averaged mass.
pub fn union_budget_sinks(mass_per_head: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    let mean = head_mean_mass(mass_per_head)?;
    topk_sinks(&mean, k)
}

/// Head-averaged incoming mass.
pub fn head_mean_mass(mass_per_head: &[Vec<f64>]) -> Result<Vec<f64>> {
    let h = mass_per_head.len();
    if h == 0 {
        return Err(Error::domain("no heads given"));
    }
    let n = mass_per_head[0].len();
    if mass_per_head.iter().any(|m| m.len() != n) {
        return Err(Error::shape("heads disagree on token count"));
    }
    let mut mean = vec![0.0; n];
    for m in mass_per_head {
        for (acc, &v) in mean.iter_mut().zip(m) {
            *acc += v;
        }
    }
    let inv = 1.0 / h as f64;
    for v in &mut mean {
        *v *= inv;
    }
    Ok(mean)
}

/// Head-averaged maximum incoming mass: mean over heads of each head's
/// single largest column mass.
pub fn max_mass(mass_per_head: &[Vec<f64>]) -> Result<f64> {
    let h = mass_per_head.len();
    if h == 0 {
        return Err(Error::domain("no heads given"));
    }
    let mut acc = 0.0;
    for (idx, m) in mass_per_head.iter().enumerate() {
        if m.is_empty() {
            return Err(Error::domain(format!("head {idx} has no tokens")));
        }
        let mut best = f64::NEG_INFINITY;
        for &v in m {
            if v > best {
                best = v;
            }
        }
        acc += best;
    }
    Ok(acc / h as f64)
}

/// Shannon entropy (nats) of one attention row, with the probability clamp
/// applied before the log so exact zeros stay finite.
pub fn attention_entropy(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::domain("entropy of an empty distribution"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL || p.iter().any(|&v| v < 0.0) {
        return Err(Error::contract(format!(
            "entropy input is not a probability vector (sum {sum})"
        )));
    }
    let mut h = 0.0;
    for &v in p {
        let c = v.max(ENTROPY_CLAMP);
        h -= c * c.ln();
    }
    Ok(h)
}

/// Total mass captured by the k highest-mass tokens.
pub fn topk_concentration(mass: &[f64], k: usize) -> Result<f64> {
    let top = topk_sinks(mass, k)?;
    Ok(top.iter().map(|&j| mass[j]).sum())
}

/// Fraction of k=1 sink sets whose single index is token 0.
pub fn index0_overlap(sets: &[SinkSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::domain("no sink sets given"));
    }
    let mut hits = 0usize;
    for s in sets {
        if s.k != 1 {
            return Err(Error::contract(format!(
                "index0_overlap needs k=1 sets, found k={}",
                s.k
            )));
        }
        if s.indices[0] == 0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / sets.len() as f64)
}

/// Count sink positions on each side of the image/text token boundary.
/// Image tokens occupy positions [0, n_img), text tokens [n_img, n_img+n_txt).
pub fn modality_attribution(set: &SinkSet, n_img: usize, n_txt: usize) -> Result<ModalitySplit> {
    let n = n_img + n_txt;
    let mut split = ModalitySplit { image: 0, text: 0 };
    for &j in &set.indices {
        if j >= n {
            return Err(Error::domain(format!(
                "sink index {j} outside token range 0..{n}"
            )));
        }
        if j < n_img {
            split.image += 1;
        } else {
            split.text += 1;
        }
    }
    Ok(split)
}

/// Max and 95th-percentile euclidean token norms over the rows of a block
/// output. The percentile is nearest-rank: the ceil(0.95 n)-th smallest.
pub fn activation_stats(block_output: &Tensor) -> Result<ActivationStats> {
    if block_output.ndim() != 2 || block_output.rows() == 0 {
        return Err(Error::shape("activation stats need a non-empty 2-D tensor"));
    }
    let n = block_output.rows();
    let mut norms = Vec::with_capacity(n);
    for r in 0..n {
        let sq: f64 = block_output.row(r).iter().map(|v| v * v).sum();
        norms.push(sq.sqrt());
    }
    let mut sorted = norms.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite norms"));
    let rank = ((0.95 * n as f64).ceil() as usize).max(1);
    Ok(ActivationStats {
        max_norm: sorted[n - 1],
        p95_norm: sorted[rank - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{stable_softmax, RngStream};

    fn random_attention(n: usize, stream: &mut RngStream) -> Tensor {
        let mut data = Vec::with_capacity(n * n);
        for _ in 0..n {
            let logits: Vec<f64> = (0..n).map(|_| stream.uniform(-4.0, 4.0).unwrap()).collect();
            data.extend(stable_softmax(&logits).unwrap());
        }
        Tensor::new(vec![n, n], data).unwrap()
    }

    /// Column mean the slow way: explicit double loop per column.
    fn oracle_incoming_mass(a: &Tensor) -> Vec<f64> {
        let n = a.rows();
        (0..n)
            .map(|j| (0..n).map(|i| a.row(i)[j]).sum::<f64>() / n as f64)
            .collect()
    }

    #[test]
    fn incoming_mass_matches_column_mean_oracle() {
        let mut s = RngStream::new(1001);
        for _ in 0..50 {
            let n = 2 + s.uniform_index(30).unwrap();
            let a = random_attention(n, &mut s);
            let fast = incoming_mass(&a).unwrap();
            let slow = oracle_incoming_mass(&a);
            for (x, y) in fast.iter().zip(&slow) {
                assert!((x - y).abs() < 1e-12);
            }
            // Masses themselves average to 1/N.
            let total: f64 = fast.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn incoming_mass_rejects_non_stochastic_input() {
        let bad = Tensor::new(vec![2, 2], vec![0.6, 0.6, 0.5, 0.5]).unwrap();
        assert!(matches!(incoming_mass(&bad), Err(Error::Contract(_))));
        let neg = Tensor::new(vec![2, 2], vec![1.5, -0.5, 0.5, 0.5]).unwrap();
        assert!(matches!(incoming_mass(&neg), Err(Error::Contract(_))));
        let rect = Tensor::zeros(vec![2, 3]);
        assert!(matches!(incoming_mass(&rect), Err(Error::Shape(_))));
    }

    #[test]
    fn query_subset_mass_averages_only_those_rows() {
        // Row 0 attends fully to token 0, row 1 fully to token 1.
        let a = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = incoming_mass_over_queries(&a, 0..1).unwrap();
        assert_eq!(m, vec![1.0, 0.0]);
        let m = incoming_mass_over_queries(&a, 0..2).unwrap();
        assert_eq!(m, vec![0.5, 0.5]);
        assert!(incoming_mass_over_queries(&a, 2..3).is_err());
        assert!(incoming_mass_over_queries(&a, 1..1).is_err());
    }

    #[test]
    fn topk_selects_largest_with_low_index_ties() {
        let mass = [0.1, 0.4, 0.1, 0.4];
        assert_eq!(topk_sinks(&mass, 1).unwrap(), vec![1]);
        assert_eq!(topk_sinks(&mass, 2).unwrap(), vec![1, 3]);
        assert_eq!(topk_sinks(&mass, 3).unwrap(), vec![0, 1, 3]);
        assert_eq!(topk_sinks(&mass, 4).unwrap(), vec![0, 1, 2, 3]);
        assert!(topk_sinks(&mass, 0).is_err());
        assert!(topk_sinks(&mass, 5).is_err());
        assert!(topk_sinks(&[0.5, f64::NAN], 1).is_err());
    }

    #[test]
    fn topk_matches_sort_oracle() {
        let mut s = RngStream::new(77);
        for _ in 0..200 {
            let n = 1 + s.uniform_index(64).unwrap();
            let mass: Vec<f64> = (0..n).map(|_| s.uniform(0.0, 1.0).unwrap()).collect();
            let k = 1 + s.uniform_index(n).unwrap();
            let got = topk_sinks(&mass, k).unwrap();
            // Oracle: every selected mass >= every rejected mass, and
            // among equal masses the selected indices are the smaller ones.
            let selected: Vec<f64> = got.iter().map(|&j| mass[j]).collect();
            let min_sel = selected.iter().cloned().fold(f64::INFINITY, f64::min);
            for j in 0..n {
                if !got.contains(&j) {
                    assert!(
                        mass[j] < min_sel
                            || (mass[j] == min_sel
                                && got.iter().any(|&g| mass[g] == min_sel && g < j))
                    );
                }
            }
            assert_eq!(got.len(), k);
        }
    }

    #[test]
    fn union_budget_uses_head_mean() {
        // Head 0 peaks at token 2, head 1 peaks at token 0; the mean peaks
        // at token 0 (0.45 vs 0.40).
        let h0 = vec![0.2, 0.2, 0.6];
        let h1 = vec![0.7, 0.1, 0.2];
        assert_eq!(union_budget_sinks(&[h0, h1], 1).unwrap(), vec![0]);
        assert!(union_budget_sinks(&[], 1).is_err());
        assert!(union_budget_sinks(&[vec![0.5], vec![0.3, 0.7]], 1).is_err());
    }

    #[test]
    fn max_mass_means_per_head_peaks() {
        let h0 = vec![1.0, 0.0, 0.0, 0.0];
        let h1 = vec![0.25; 4];
        let v = max_mass(&[h0, h1]).unwrap();
        assert!((v - 0.625).abs() < 1e-15);
    }

    #[test]
    fn entropy_of_uniform_and_onehot() {
        let u = vec![0.25; 4];
        let h = attention_entropy(&u).unwrap();
        assert!((h - 4.0_f64.ln()).abs() < 1e-12);
        // One-hot with the clamp: three clamped zeros contribute
        // 3 * 1e-12 * ln(1e12) each, about 8.29e-11 total.
        let one_hot = vec![1.0, 0.0, 0.0, 0.0];
        let h = attention_entropy(&one_hot).unwrap();
        let expect = 3.0 * ENTROPY_CLAMP * (1e12_f64).ln();
        assert!((h - expect).abs() / expect < 0.01, "h = {h:e}");
        assert!(attention_entropy(&[]).is_err());
        assert!(attention_entropy(&[0.7, 0.7]).is_err());
    }

    #[test]
    fn concentration_sums_topk_mass() {
        let mass = [0.5, 0.1, 0.25, 0.15];
        assert!((topk_concentration(&mass, 2).unwrap() - 0.75).abs() < 1e-15);
        assert!((topk_concentration(&mass, 4).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn index0_overlap_counts_token_zero_hits() {
        let mk = |idx: usize| SinkSet::new(0, 0, 0, vec![idx], SinkProtocol::PerHead).unwrap();
        let sets = vec![mk(0), mk(3), mk(0), mk(7)];
        assert!((index0_overlap(&sets).unwrap() - 0.5).abs() < 1e-15);
        let bad = SinkSet::new(0, 0, 0, vec![0, 1], SinkProtocol::PerHead).unwrap();
        assert!(index0_overlap(&[bad]).is_err());
        assert!(index0_overlap(&[]).is_err());
    }

    #[test]
    fn modality_attribution_splits_at_image_boundary() {
        let set = SinkSet::new(0, 0, -1, vec![0, 3, 64, 79], SinkProtocol::UnionBudget).unwrap();
        let split = modality_attribution(&set, 64, 16).unwrap();
        assert_eq!(split, ModalitySplit { image: 2, text: 2 });
        let oob = SinkSet::new(0, 0, -1, vec![80], SinkProtocol::UnionBudget).unwrap();
        assert!(modality_attribution(&oob, 64, 16).is_err());
    }

    #[test]
    fn activation_stats_nearest_rank() {
        // 100 unit-norm rows, one row of norm 5: p95 stays at the bulk.
        let mut t = Tensor::zeros(vec![100, 2]);
        for r in 0..100 {
            t.row_mut(r)[0] = 1.0;
        }
        t.row_mut(17)[0] = 5.0;
        let st = activation_stats(&t).unwrap();
        assert_eq!(st.max_norm, 5.0);
        assert_eq!(st.p95_norm, 1.0);
        // Tiny input: rank clamps to the only element.
        let one = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        let st = activation_stats(&one).unwrap();
        assert_eq!(st.max_norm, 5.0);
        assert_eq!(st.p95_norm, 5.0);
    }

    #[test]
    fn sink_set_enforces_sorted_unique_indices() {
        assert!(SinkSet::new(0, 0, 0, vec![3, 1], SinkProtocol::PerHead).is_err());
        assert!(SinkSet::new(0, 0, 0, vec![1, 1], SinkProtocol::PerHead).is_err());
        let ok = SinkSet::new(2, 5, -1, vec![0, 4, 9], SinkProtocol::UnionBudget).unwrap();
        assert_eq!(ok.k, 3);
    }
}
