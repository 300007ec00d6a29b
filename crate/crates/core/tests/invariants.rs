//! Property tests for the contracts the rest of the stack leans on.

use proptest::prelude::*;
use sinklab_core::intervene::{
    active_fraction, apply_score_bias, apply_value_replacement, phase_gate, random_equal_budget,
    verify_reduction, PhaseWindow, ReductionFactor, ValueMode,
};
use sinklab_core::numerics::{stable_softmax, RngStream, Tensor};
use sinklab_core::probe::{
    attention_entropy, head_mean_mass, incoming_mass, modality_attribution, topk_concentration,
    topk_sinks, union_budget_sinks, SinkProtocol, SinkSet,
};
use sinklab_core::proxymetrics::{frechet_shift, perceptual_distance};
use sinklab_core::stats::{
    bootstrap_ci, equivalence_check, holm_correction, student_t_two_sided, Equivalence,
};

fn logits_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0..20.0f64, 2..max_len)
}

fn attention_matrix() -> impl Strategy<Value = Tensor> {
    (2usize..10)
        .prop_flat_map(|n| {
            prop::collection::vec(-20.0..20.0f64, n * n).prop_map(move |flat| (n, flat))
        })
        .prop_map(|(n, flat)| {
            let mut data = Vec::with_capacity(n * n);
            for row in flat.chunks(n) {
                data.extend(stable_softmax(row).unwrap());
            }
            Tensor::new(vec![n, n], data).unwrap()
        })
}

proptest! {
    // Softmax output is a probability vector no matter the (finite) input,
    // and shifting every logit by a constant does not move it.
    #[test]
    fn softmax_is_row_stochastic_and_shift_invariant(
        logits in logits_vec(64),
        shift in -50.0..50.0f64,
    ) {
        let p = stable_softmax(&logits).unwrap();
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let q = stable_softmax(&shifted).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    // Incoming mass of a row-stochastic matrix is a distribution over keys.
    #[test]
    fn incoming_mass_is_a_distribution(att in attention_matrix()) {
        let mass = incoming_mass(&att).unwrap();
        prop_assert!(mass.iter().all(|&m| (0.0..=1.0).contains(&m)));
        prop_assert!((mass.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    // Top-k selection returns sorted unique indices whose mass dominates
    // every unselected index, ties going to the lower index.
    #[test]
    fn topk_selection_dominates_the_rest(
        mass in prop::collection::vec(0.0..1.0f64, 1..32),
        k in 1usize..8,
    ) {
        let k = k.min(mass.len());
        let picked = topk_sinks(&mass, k).unwrap();
        prop_assert_eq!(picked.len(), k);
        prop_assert!(picked.windows(2).all(|w| w[0] < w[1]));
        let worst_picked = picked
            .iter()
            .map(|&i| mass[i])
            .fold(f64::INFINITY, f64::min);
        for (i, &m) in mass.iter().enumerate() {
            if !picked.contains(&i) {
                prop_assert!(m <= worst_picked);
                if m == worst_picked {
                    // The tie went to a lower index.
                    prop_assert!(picked.iter().any(|&p| mass[p] == m && p < i));
                }
            }
        }
    }

    // Concentration grows with k and saturates at 1.
    #[test]
    fn concentration_is_monotone_in_k(att in attention_matrix()) {
        let mass = incoming_mass(&att).unwrap();
        let n = mass.len();
        let mut prev = 0.0;
        for k in 1..=n {
            let c = topk_concentration(&mass, k).unwrap();
            prop_assert!(c >= prev - 1e-12);
            prev = c;
        }
        prop_assert!((prev - 1.0).abs() < 1e-9);
    }

    // Entropy of any attention row lies in [0, ln N].
    #[test]
    fn entropy_is_bounded(logits in logits_vec(64)) {
        let p = stable_softmax(&logits).unwrap();
        let h = attention_entropy(&p).unwrap();
        prop_assert!(h >= 0.0);
        prop_assert!(h <= (p.len() as f64).ln() + 1e-9);
    }

    // Biasing logits by ln(eta) on the target columns then softmaxing equals
    // softmaxing first, scaling the target probabilities by eta, and
    // renormalizing.
    #[test]
    fn score_path_equals_post_softmax_scaling(
        logits in logits_vec(64),
        raw_targets in prop::collection::btree_set(0usize..64, 1..6),
        eta in prop_oneof![Just(0.5), Just(0.25), Just(0.1), Just(0.01), 0.001..1.0f64],
    ) {
        let n = logits.len();
        let targets: Vec<usize> = raw_targets.into_iter().filter(|&t| t < n).collect();
        prop_assume!(!targets.is_empty());
        let via_bias = stable_softmax(&apply_score_bias(&logits, &targets, eta).unwrap()).unwrap();
        let base = stable_softmax(&logits).unwrap();
        let mut scaled: Vec<f64> = base.clone();
        for &t in &targets {
            scaled[t] *= eta;
        }
        let z: f64 = scaled.iter().sum();
        for v in &mut scaled {
            *v /= z;
        }
        for (a, b) in via_bias.iter().zip(&scaled) {
            prop_assert!((a - b).abs() < 1e-12, "bias {} vs scaled {}", a, b);
        }
    }

    // eta = 1 leaves the logits bitwise untouched.
    #[test]
    fn score_path_unit_eta_is_identity(
        logits in logits_vec(64),
        raw_targets in prop::collection::btree_set(0usize..64, 1..6),
    ) {
        let n = logits.len();
        let targets: Vec<usize> = raw_targets.into_iter().filter(|&t| t < n).collect();
        prop_assume!(!targets.is_empty());
        let out = apply_score_bias(&logits, &targets, 1.0).unwrap();
        for (a, b) in out.iter().zip(&logits) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    // eta = 0 drives the target mass to exactly zero and the rest still sums
    // to one.
    #[test]
    fn score_path_zero_eta_masks_exactly(
        logits in logits_vec(64),
        raw_targets in prop::collection::btree_set(0usize..64, 1..6),
    ) {
        let n = logits.len();
        let targets: Vec<usize> = raw_targets.into_iter().filter(|&t| t < n).collect();
        prop_assume!(!targets.is_empty() && targets.len() < n);
        let p = stable_softmax(&apply_score_bias(&logits, &targets, 0.0).unwrap()).unwrap();
        for &t in &targets {
            prop_assert_eq!(p[t], 0.0);
        }
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    // Value replacement: mean mode writes the pre-replacement row mean into
    // every target row and leaves the rest bitwise alone; lerp interpolates
    // with exact endpoints.
    #[test]
    fn value_replacement_modes_agree_at_endpoints(
        rows in 2usize..12,
        cols in 1usize..8,
        seed in 0u64..1000,
        target in 0usize..12,
    ) {
        let target = target % rows;
        let mut stream = RngStream::new(seed);
        let values = Tensor::random_uniform(vec![rows, cols], &mut stream, -2.0, 2.0).unwrap();
        let targets = [target];

        let mean_out = apply_value_replacement(&values, &targets, ValueMode::Mean, 0.0).unwrap();
        let mut expect_mean = vec![0.0; cols];
        for r in 0..rows {
            for (m, &v) in expect_mean.iter_mut().zip(values.row(r)) {
                *m += v;
            }
        }
        for m in &mut expect_mean {
            *m /= rows as f64;
        }
        for (a, b) in mean_out.row(target).iter().zip(&expect_mean) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for r in 0..rows {
            if r != target {
                for (a, b) in mean_out.row(r).iter().zip(values.row(r)) {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }

        let zero_out = apply_value_replacement(&values, &targets, ValueMode::Zero, 0.0).unwrap();
        prop_assert!(zero_out.row(target).iter().all(|&v| v == 0.0));

        let ident = apply_value_replacement(&values, &targets, ValueMode::Lerp, 1.0).unwrap();
        for (a, b) in ident.data().iter().zip(values.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }

        let lerp0 = apply_value_replacement(&values, &targets, ValueMode::Lerp, 0.0).unwrap();
        for (a, b) in lerp0.data().iter().zip(mean_out.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    // The random control draws exactly `budget` distinct in-range positions
    // and replays bit-identically from the same stream state.
    #[test]
    fn random_budget_is_valid_and_reproducible(
        n in 2usize..80,
        budget in 1usize..20,
        seed in 0u64..10_000,
    ) {
        let budget = budget.min(n);
        let mut s1 = RngStream::new(seed).child("control");
        let a = random_equal_budget(n, budget, &mut s1).unwrap();
        prop_assert_eq!(a.len(), budget);
        prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(a.iter().all(|&i| i < n));
        let mut s2 = RngStream::new(seed).child("control");
        let b = random_equal_budget(n, budget, &mut s2).unwrap();
        prop_assert_eq!(a, b);
    }

    // Phase gating has closed bounds, and the active fraction counts the
    // open steps exactly.
    #[test]
    fn phase_gate_bounds_are_closed(
        lo in 0.0..0.9f64,
        span in 0.0..0.5f64,
        steps in 1usize..40,
    ) {
        let hi = (lo + span).min(1.0);
        let w = PhaseWindow::new(lo, hi).unwrap();
        prop_assert!(phase_gate(lo, &w).unwrap());
        prop_assert!(phase_gate(hi, &w).unwrap());
        let mut log = Vec::new();
        let mut open = 0usize;
        for i in 0..steps {
            let t = i as f64 / steps as f64;
            let g = phase_gate(t, &w).unwrap();
            prop_assert_eq!(g, t >= lo && t <= hi);
            if g { open += 1; }
            log.push(g);
        }
        let frac = active_fraction(&log).unwrap();
        prop_assert_eq!(frac, open as f64 / steps as f64);
    }

    // Reduction verification: zero after-mass is reported as infinite, and
    // the finite branch reproduces the ratio.
    #[test]
    fn reduction_factor_matches_the_ratio(
        before in 1e-6..1.0f64,
        after in 0.0..1.0f64,
    ) {
        match verify_reduction(before, after).unwrap() {
            ReductionFactor::Infinite => prop_assert_eq!(after, 0.0),
            ReductionFactor::Finite(f) => {
                prop_assert!(after > 0.0);
                prop_assert!((f - before / after).abs() <= 1e-12 * f.abs());
            }
        }
    }

    // Holm correction never lowers a p-value, never exceeds one, and keeps
    // the raw ordering.
    #[test]
    fn holm_dominates_raw_p_values(
        ps in prop::collection::vec(0.0..1.0f64, 1..12),
    ) {
        let adj = holm_correction(&ps).unwrap();
        prop_assert_eq!(adj.len(), ps.len());
        for (&a, &p) in adj.iter().zip(&ps) {
            prop_assert!(a >= p);
            prop_assert!(a <= 1.0);
        }
        let mut order: Vec<usize> = (0..ps.len()).collect();
        order.sort_by(|&i, &j| ps[i].partial_cmp(&ps[j]).unwrap());
        for w in order.windows(2) {
            prop_assert!(adj[w[0]] <= adj[w[1]] + 1e-15);
        }
    }

    // Bootstrap CI brackets stay inside the sample range, nest with the
    // level, and replay bit-identically from the same stream.
    #[test]
    fn bootstrap_ci_is_ordered_and_deterministic(
        samples in prop::collection::vec(-5.0..5.0f64, 3..40),
        seed in 0u64..1000,
    ) {
        let stream = RngStream::new(seed).child("ci");
        let (lo, hi) = bootstrap_ci(&samples, 200, 0.95, &stream).unwrap();
        prop_assert!(lo <= hi);
        let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo >= min - 1e-12 && hi <= max + 1e-12);
        let (lo2, hi2) = bootstrap_ci(&samples, 200, 0.95, &stream).unwrap();
        prop_assert_eq!(lo.to_bits(), lo2.to_bits());
        prop_assert_eq!(hi.to_bits(), hi2.to_bits());
        let (nlo, nhi) = bootstrap_ci(&samples, 200, 0.5, &stream).unwrap();
        prop_assert!(nlo >= lo - 1e-12 && nhi <= hi + 1e-12);
    }

    // The t tail probability is a probability, is 1 at t = 0, and shrinks as
    // |t| grows.
    #[test]
    fn t_tail_probability_behaves(
        t in -30.0..30.0f64,
        dof in 1usize..200,
    ) {
        let p = student_t_two_sided(t, dof).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((student_t_two_sided(0.0, dof).unwrap() - 1.0).abs() < 1e-12);
        let further = student_t_two_sided(t * 2.0, dof).unwrap();
        if t != 0.0 {
            prop_assert!(further <= p + 1e-12);
        }
    }

    // Equivalence verdicts partition the space of CIs.
    #[test]
    fn equivalence_verdicts_partition(
        a in -2.0..2.0f64,
        b in -2.0..2.0f64,
        margin in 0.01..1.0f64,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let v = equivalence_check(lo, hi, margin).unwrap();
        let inside = lo > -margin && hi < margin;
        let outside = lo > margin || hi < -margin;
        match v {
            Equivalence::Equivalent => prop_assert!(inside),
            Equivalence::Exceeds => prop_assert!(outside),
            Equivalence::Boundary => prop_assert!(!inside && !outside),
        }
    }

    // The union budget is the top-k of head-averaged mass, so it is sorted,
    // unique, and never larger than the budget.
    #[test]
    fn union_budget_tracks_head_mean_mass(
        att in attention_matrix(),
        k in 1usize..8,
    ) {
        let m0 = incoming_mass(&att).unwrap();
        // A second synthetic head: reverse the first to vary the mean.
        let m1: Vec<f64> = m0.iter().rev().cloned().collect();
        let heads = vec![m0, m1];
        let k = k.min(heads[0].len());
        let union = union_budget_sinks(&heads, k).unwrap();
        prop_assert_eq!(union.len(), k);
        prop_assert!(union.windows(2).all(|w| w[0] < w[1]));
        let mean = head_mean_mass(&heads).unwrap();
        let expect = topk_sinks(&mean, k).unwrap();
        prop_assert_eq!(union, expect);
    }

    // Modality attribution counts every selected position exactly once.
    #[test]
    fn modality_attribution_is_a_partition(
        att in attention_matrix(),
        k in 1usize..6,
        n_img_frac in 0.2..0.8f64,
    ) {
        let mass = incoming_mass(&att).unwrap();
        let n = mass.len();
        let k = k.min(n);
        let n_img = ((n as f64 * n_img_frac) as usize).clamp(1, n - 1);
        let n_txt = n - n_img;
        let set = SinkSet::new(0, 0, -1, topk_sinks(&mass, k).unwrap(), SinkProtocol::PerHead)
            .unwrap();
        let split = modality_attribution(&set, n_img, n_txt).unwrap();
        prop_assert_eq!(split.image + split.text, k);
    }

    // Pixel-space distance is an exact pseudometric at zero and symmetric.
    #[test]
    fn perceptual_distance_is_symmetric(seed in 0u64..500) {
        let mut s = RngStream::new(seed).child("img");
        let a = Tensor::random_uniform(vec![8, 8, 3], &mut s, 0.0, 1.0).unwrap();
        let b = Tensor::random_uniform(vec![8, 8, 3], &mut s, 0.0, 1.0).unwrap();
        prop_assert_eq!(perceptual_distance(&a, &a).unwrap(), 0.0);
        let ab = perceptual_distance(&a, &b).unwrap();
        let ba = perceptual_distance(&b, &a).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        prop_assert!(ab >= 0.0);
    }

    // Population-shift distance is zero on identical populations, symmetric,
    // and non-negative.
    #[test]
    fn frechet_shift_is_symmetric(seed in 0u64..500, n in 2usize..10) {
        let mut s = RngStream::new(seed).child("pop");
        let a: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| s.standard_normal()).collect())
            .collect();
        let b: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| s.standard_normal()).collect())
            .collect();
        prop_assert_eq!(frechet_shift(&a, &a).unwrap(), 0.0);
        let ab = frechet_shift(&a, &b).unwrap();
        let ba = frechet_shift(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab >= 0.0);
    }

    // Counter streams: children are independent of parent draws, and replay
    // from an identical state is bit-exact.
    #[test]
    fn stream_children_ignore_parent_position(
        seed in 0u64..u64::MAX,
        draws in 0usize..32,
    ) {
        let mut parent = RngStream::new(seed);
        let child_before = parent.child("worker");
        for _ in 0..draws {
            parent.next_u64();
        }
        let child_after = parent.child("worker");
        let mut a = child_before;
        let mut b = child_after;
        for _ in 0..8 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = RngStream::new(seed).child("worker");
        let mut d = RngStream::new(seed).child("worker");
        for _ in 0..8 {
            prop_assert_eq!(c.next_f64().to_bits(), d.next_f64().to_bits());
        }
    }
}
