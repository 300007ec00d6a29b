//! Record-to-statistics functions. Everything here is pure: given the same
//! records and config, the outputs are bit-identical, which is what lets
//! `report` regenerate every table from the persisted run file.

use sinklab_core::numerics::RngStream;
use sinklab_core::stats::{
    diff_of_diffs, equivalence_check, paired_diffs, paired_stat, trend_test, DoDResult,
    Equivalence, PairKey, PairedStat,
};
use std::collections::BTreeMap;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::records::RunRecord;

/// Every resample stream descends from base_seed via fixed labels, so
/// statistics never depend on evaluation order or thread count.
pub fn stats_stream(base_seed: u64, condition: &str, metric: &str) -> RngStream {
    RngStream::new(base_seed)
        .child("stats")
        .child(condition)
        .child(metric)
}

/// Records of one condition, prompt order.
pub fn by_condition<'a>(records: &'a [RunRecord], condition: &str) -> Vec<&'a RunRecord> {
    let mut rows: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.condition == condition)
        .collect();
    rows.sort_by_key(|r| r.prompt_id);
    rows
}

fn require_condition<'a>(records: &'a [RunRecord], condition: &str) -> Result<Vec<&'a RunRecord>> {
    let rows = by_condition(records, condition);
    if rows.is_empty() {
        return Err(HarnessError::runtime(format!(
            "no records for condition '{condition}'"
        )));
    }
    Ok(rows)
}

fn key(r: &RunRecord) -> PairKey {
    PairKey {
        prompt_id: r.prompt_id,
        seed: r.seed,
    }
}

/// (key, alignment) per prompt for one condition.
pub fn alignment_series(records: &[RunRecord], condition: &str) -> Result<Vec<(PairKey, f64)>> {
    require_condition(records, condition)?
        .into_iter()
        .map(|r| {
            let v = r.metrics.alignment.ok_or_else(|| {
                HarnessError::runtime(format!(
                    "record prompt {} condition '{condition}' lacks the alignment metric",
                    r.prompt_id
                ))
            })?;
            Ok((key(r), v))
        })
        .collect()
}

/// (key, alignment_cond - alignment_base) over seed-matched pairs.
pub fn keyed_alignment_deltas(
    records: &[RunRecord],
    baseline: &str,
    condition: &str,
) -> Result<Vec<(PairKey, f64)>> {
    let base = alignment_series(records, baseline)?;
    let cond = alignment_series(records, condition)?;
    let deltas = paired_diffs(&cond, &base)?;
    Ok(cond
        .into_iter()
        .zip(deltas)
        .map(|((k, _), d)| (k, d))
        .collect())
}

/// Per-prompt perceptual distance against the run's reference condition.
/// These are deltas already: the reference's own distance to itself is zero.
pub fn keyed_perceptual(records: &[RunRecord], condition: &str) -> Result<Vec<(PairKey, f64)>> {
    require_condition(records, condition)?
        .into_iter()
        .map(|r| {
            let v = r.metrics.perceptual_vs_baseline.ok_or_else(|| {
                HarnessError::runtime(format!(
                    "record prompt {} condition '{condition}' lacks the perceptual metric",
                    r.prompt_id
                ))
            })?;
            Ok((key(r), v))
        })
        .collect()
}

/// Paired alignment contrast condition - baseline.
pub fn alignment_contrast(
    records: &[RunRecord],
    baseline: &str,
    condition: &str,
    cfg: &ExperimentConfig,
) -> Result<PairedStat> {
    let deltas: Vec<f64> = keyed_alignment_deltas(records, baseline, condition)?
        .into_iter()
        .map(|(_, d)| d)
        .collect();
    let stream = stats_stream(cfg.base_seed, condition, "alignment");
    Ok(paired_stat(&deltas, cfg.stats.n_resamples, cfg.stats.ci_level, &stream)?)
}

/// One-sample summary of a condition's perceptual distances.
pub fn perceptual_stat(
    records: &[RunRecord],
    condition: &str,
    cfg: &ExperimentConfig,
) -> Result<PairedStat> {
    let values: Vec<f64> = keyed_perceptual(records, condition)?
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    let stream = stats_stream(cfg.base_seed, condition, "perceptual");
    Ok(paired_stat(&values, cfg.stats.n_resamples, cfg.stats.ci_level, &stream)?)
}

/// Alignment deltas between two conditions paired by prompt alone. Used for
/// the seed-variation noise floor, where the two sides intentionally run
/// from different seeds.
pub fn prompt_paired_deltas(
    records: &[RunRecord],
    baseline: &str,
    condition: &str,
) -> Result<Vec<f64>> {
    let base = alignment_series(records, baseline)?;
    let cond = alignment_series(records, condition)?;
    if base.len() != cond.len() {
        return Err(HarnessError::Pairing(format!(
            "prompt counts differ: {} vs {}",
            cond.len(),
            base.len()
        )));
    }
    let mut out = Vec::with_capacity(base.len());
    for ((kc, vc), (kb, vb)) in cond.iter().zip(&base) {
        if kc.prompt_id != kb.prompt_id {
            return Err(HarnessError::Pairing(format!(
                "prompt mismatch: {} vs {}",
                kc.prompt_id, kb.prompt_id
            )));
        }
        out.push(vc - vb);
    }
    Ok(out)
}

/// Feature-cloud shift between two conditions.
pub fn frechet_between(records: &[RunRecord], a: &str, b: &str) -> Result<f64> {
    let collect = |name: &str| -> Result<Vec<Vec<f64>>> {
        require_condition(records, name)?
            .into_iter()
            .map(|r| {
                r.metrics.features.clone().ok_or_else(|| {
                    HarnessError::runtime(format!(
                        "record prompt {} condition '{name}' lacks feature vectors",
                        r.prompt_id
                    ))
                })
            })
            .collect()
    };
    let fa = collect(a)?;
    let fb = collect(b)?;
    Ok(sinklab_core::proxymetrics::frechet_shift(&fa, &fb)?)
}

/// Specificity gap: (sink - baseline) minus (random - baseline), per pair.
pub fn specificity_gap(
    records: &[RunRecord],
    sink: &str,
    random: &str,
    metric: &str,
    baseline: &str,
    cfg: &ExperimentConfig,
) -> Result<DoDResult> {
    let (sink_deltas, rand_deltas) = match metric {
        "alignment" => (
            keyed_alignment_deltas(records, baseline, sink)?,
            keyed_alignment_deltas(records, baseline, random)?,
        ),
        "perceptual" => (keyed_perceptual(records, sink)?, keyed_perceptual(records, random)?),
        other => {
            return Err(HarnessError::config(format!(
                "metric '{other}' has no per-pair form"
            )))
        }
    };
    let stream = stats_stream(cfg.base_seed, sink, &format!("dod-{metric}"));
    Ok(diff_of_diffs(
        &sink_deltas,
        &rand_deltas,
        cfg.stats.n_resamples,
        cfg.stats.ci_level,
        &stream,
    )?)
}

/// Budget trend: gap at the probe budget minus gap at the reference budget.
/// DoD per-item vectors are prompt-ordered, so one shared key vector labels
/// both sides; the pairing claim was already verified when each gap was
/// differenced against the common baseline.
pub fn budget_trend(
    gap_high: &DoDResult,
    gap_reference: &DoDResult,
    keys: &[PairKey],
    cfg: &ExperimentConfig,
    label: &str,
) -> Result<PairedStat> {
    if gap_high.per_item.len() != keys.len() || gap_reference.per_item.len() != keys.len() {
        return Err(HarnessError::Pairing("trend inputs misaligned".into()));
    }
    let rekey = |gap: &DoDResult| -> Vec<(PairKey, f64)> {
        keys.iter().zip(&gap.per_item).map(|(k, &d)| (*k, d)).collect()
    };
    let stream = stats_stream(cfg.base_seed, label, "trend");
    Ok(trend_test(
        &rekey(gap_high),
        &rekey(gap_reference),
        cfg.stats.n_resamples,
        cfg.stats.ci_level,
        &stream,
    )?)
}

/// Resolve the equivalence margin. A numeric setting is used as given; the
/// auto form is twice the width the alignment delta shows under nothing but
/// seed variation (full CI width of the noise-floor mean).
pub fn resolve_margin(
    records: &[RunRecord],
    cfg: &ExperimentConfig,
    baseline: &str,
    seedvar: &str,
) -> Result<f64> {
    use crate::config::MarginSetting;
    match &cfg.stats.equivalence_margin {
        MarginSetting::Value(v) => Ok(*v),
        MarginSetting::Named(_) => {
            let deltas = prompt_paired_deltas(records, baseline, seedvar)?;
            let stream = stats_stream(cfg.base_seed, seedvar, "margin");
            let stat = paired_stat(&deltas, cfg.stats.n_resamples, cfg.stats.ci_level, &stream)?;
            let margin = stat.ci_high - stat.ci_low;
            if !(margin > 0.0) {
                return Err(HarnessError::config(format!(
                    "auto margin degenerate: noise-floor CI [{}, {}] has zero width",
                    stat.ci_low, stat.ci_high
                )));
            }
            Ok(margin)
        }
    }
}

/// Equivalence verdict for a paired stat against a margin.
pub fn verdict(stat: &PairedStat, margin: f64) -> Result<Equivalence> {
    Ok(equivalence_check(stat.ci_low, stat.ci_high, margin)?)
}

/// Aggregate over a condition's verification rows.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationSummary {
    pub n_sites: usize,
    pub mass_before_mean: f64,
    pub mass_after_mean: f64,
    /// Infinity when every site hit an exact zero.
    pub min_factor: f64,
    pub all_above_floor: bool,
}

pub fn verification_summary(
    records: &[RunRecord],
    condition: &str,
    floor: f64,
) -> Result<Option<VerificationSummary>> {
    let rows = require_condition(records, condition)?;
    let mut n = 0usize;
    let mut before = 0.0;
    let mut after = 0.0;
    let mut min_factor = f64::INFINITY;
    for r in rows {
        for v in &r.verification {
            n += 1;
            before += v.mass_before;
            after += v.mass_after;
            min_factor = min_factor.min(v.factor.as_f64());
        }
    }
    if n == 0 {
        return Ok(None);
    }
    Ok(Some(VerificationSummary {
        n_sites: n,
        mass_before_mean: before / n as f64,
        mass_after_mean: after / n as f64,
        min_factor,
        all_above_floor: min_factor >= floor,
    }))
}

/// Mean verified sink mass by step for one condition (step, before, after).
pub fn mass_by_step(records: &[RunRecord], condition: &str) -> Result<Vec<(usize, f64, f64)>> {
    let rows = require_condition(records, condition)?;
    let mut acc: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        for v in &r.verification {
            let e = acc.entry(v.step).or_insert((0.0, 0.0, 0));
            e.0 += v.mass_before;
            e.1 += v.mass_after;
            e.2 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(step, (b, a, n))| (step, b / n as f64, a / n as f64))
        .collect())
}

pub fn mean_active_fraction(records: &[RunRecord], condition: &str) -> Result<f64> {
    let rows = require_condition(records, condition)?;
    Ok(rows.iter().map(|r| r.active_fraction).sum::<f64>() / rows.len() as f64)
}

/// Mean collision rate of a random control; None when none was recorded.
pub fn mean_collision_rate(records: &[RunRecord], condition: &str) -> Option<f64> {
    let rates: Vec<f64> = by_condition(records, condition)
        .iter()
        .filter_map(|r| r.collision_rate)
        .collect();
    if rates.is_empty() {
        None
    } else {
        Some(rates.iter().sum::<f64>() / rates.len() as f64)
    }
}

/// Concentration profile of one layer, averaged over prompts and steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerConcentration {
    pub layer: usize,
    pub max_mass: f64,
    pub image_query_mass: f64,
    pub entropy: f64,
    pub top5: f64,
    /// Share of per-head sink sets that include token 0.
    pub index0_share: f64,
    /// Share of per-head sink slots landing on text tokens.
    pub text_sink_share: f64,
}

pub fn layer_concentration(
    records: &[RunRecord],
    condition: &str,
) -> Result<Vec<LayerConcentration>> {
    let rows = require_condition(records, condition)?;
    let mut probe: BTreeMap<usize, (f64, f64, f64, f64, usize)> = BTreeMap::new();
    let mut sinks: BTreeMap<usize, (usize, usize, usize, usize)> = BTreeMap::new();
    for r in &rows {
        for p in &r.probes {
            let e = probe.entry(p.layer).or_insert((0.0, 0.0, 0.0, 0.0, 0));
            e.0 += p.max_mass;
            e.1 += p.image_query_mass;
            e.2 += p.entropy;
            e.3 += p.top5;
            e.4 += 1;
        }
        for s in &r.sinks {
            if s.head < 0 {
                continue;
            }
            let e = sinks.entry(s.layer).or_insert((0, 0, 0, 0));
            if s.indices.contains(&0) {
                e.0 += 1;
            }
            e.1 += 1;
            e.2 += s.text_count;
            e.3 += s.image_count + s.text_count;
        }
    }
    if probe.is_empty() {
        return Err(HarnessError::runtime(format!(
            "condition '{condition}' carries no probe rows"
        )));
    }
    probe
        .into_iter()
        .map(|(layer, (mm, iq, en, t5, n))| {
            let nf = n as f64;
            let (i0, heads, text, slots) = sinks.get(&layer).copied().unwrap_or((0, 0, 0, 0));
            if heads == 0 || slots == 0 {
                return Err(HarnessError::runtime(format!(
                    "layer {layer} has probe rows but no per-head sink rows"
                )));
            }
            Ok(LayerConcentration {
                layer,
                max_mass: mm / nf,
                image_query_mass: iq / nf,
                entropy: en / nf,
                top5: t5 / nf,
                index0_share: i0 as f64 / heads as f64,
                text_sink_share: text as f64 / slots as f64,
            })
        })
        .collect()
}

/// Per (layer, step) concentration averaged over prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct StepProfile {
    pub layer: usize,
    pub step: usize,
    pub t_norm: f64,
    pub max_mass: f64,
    pub entropy: f64,
}

pub fn step_profile(records: &[RunRecord], condition: &str) -> Result<Vec<StepProfile>> {
    let rows = require_condition(records, condition)?;
    let mut acc: BTreeMap<(usize, usize), (f64, f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        for p in &r.probes {
            let e = acc.entry((p.layer, p.step)).or_insert((0.0, 0.0, 0.0, 0));
            e.0 += p.t_norm;
            e.1 += p.max_mass;
            e.2 += p.entropy;
            e.3 += 1;
        }
    }
    if acc.is_empty() {
        return Err(HarnessError::runtime(format!(
            "condition '{condition}' carries no probe rows"
        )));
    }
    Ok(acc
        .into_iter()
        .map(|((layer, step), (t, mm, en, n))| {
            let nf = n as f64;
            StepProfile {
                layer,
                step,
                t_norm: t / nf,
                max_mass: mm / nf,
                entropy: en / nf,
            }
        })
        .collect())
}

/// Where per-head sinks land: occurrence counts per (layer, token index).
#[derive(Debug, Clone, PartialEq)]
pub struct SinkPosition {
    pub layer: usize,
    pub index: usize,
    pub count: usize,
    /// Fraction of that layer's per-head sink slots.
    pub share: f64,
    pub modality: &'static str,
}

pub fn sink_positions(
    records: &[RunRecord],
    condition: &str,
    n_img: usize,
) -> Result<Vec<SinkPosition>> {
    let rows = require_condition(records, condition)?;
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut totals: BTreeMap<usize, usize> = BTreeMap::new();
    for r in rows {
        for s in &r.sinks {
            if s.head < 0 {
                continue;
            }
            for &idx in &s.indices {
                *counts.entry((s.layer, idx)).or_insert(0) += 1;
                *totals.entry(s.layer).or_insert(0) += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(HarnessError::runtime(format!(
            "condition '{condition}' carries no sink rows"
        )));
    }
    Ok(counts
        .into_iter()
        .map(|((layer, index), count)| SinkPosition {
            layer,
            index,
            count,
            share: count as f64 / totals[&layer] as f64,
            modality: if index >= n_img { "text" } else { "image" },
        })
        .collect())
}
