//! Specificity family: at each budget, ablate the identified sink set and
//! an equal-budget random token set, then and ask whether targeting the
//! sinks hurts more than spending the same budget at random.

use std::path::Path;

use crate::analysis::{budget_trend, keyed_alignment_deltas, mean_collision_rate, specificity_gap};
use crate::config::{ConditionSection, ExperimentConfig, LayerSetting};
use crate::error::{HarnessError, Result};
use crate::records::RunRecord;
use crate::runner::{prepare, ExperimentManifest, PlannedCondition, ProcKind};
use crate::svg::{LineChart, Series};
use crate::tables::{fmt_f64, Summary, Table};
use sinklab_core::stats::{holm_correction, DoDResult, PairKey};

pub const GAP_TABLE: &str = "specificity.csv";
pub const TREND_TABLE: &str = "trend.csv";
pub const COLLISION_TABLE: &str = "collision.csv";
pub const GAP_PLOT: &str = "dod_by_budget.svg";
pub const SUMMARY: &str = "summary.md";

pub fn sink_name(k: usize) -> String {
    format!("sink_k{k}")
}

pub fn random_name(k: usize) -> String {
    format!("rand_k{k}")
}

fn ablate_section(name: &str, k: usize, protocol: &str, random_seed: u64) -> ConditionSection {
    let mut c = ConditionSection::baseline();
    c.name = name.to_string();
    c.pathway = "score".into();
    c.eta = 0.0;
    c.k = k;
    c.protocol = protocol.to_string();
    c.layers = LayerSetting::Named("middle".into());
    c.random_seed = random_seed;
    c
}

pub fn run(cfg: ExperimentConfig, budgets: Option<Vec<usize>>, out_dir: &Path) -> Result<()> {
    let model = cfg.model.to_model_config()?;
    let budgets = super::ksweep::validate_budgets(
        &budgets.unwrap_or_else(|| super::ksweep::DEFAULT_BUDGETS.to_vec()),
        model.n_tokens(),
    )?;
    let baseline = cfg.conditions[0].name.clone();
    let mut plan = vec![PlannedCondition::observer(&baseline)];
    for &k in &budgets {
        let sink = ablate_section(&sink_name(k), k, "union-budget", 0);
        plan.push(PlannedCondition::from_spec(&sink.name, &sink.to_spec(&model)?));
        let rand = ablate_section(&random_name(k), k, "random", cfg.base_seed);
        plan.push(PlannedCondition::from_spec(&rand.name, &rand.to_spec(&model)?));
    }
    let prepared = prepare("specificity", cfg, plan)?;
    super::run_and_analyze(&prepared, out_dir, analyze)
}

/// Budgets recovered from a persisted plan: (k, sink condition, random
/// condition), ascending.
fn plan_budgets(manifest: &ExperimentManifest) -> Result<Vec<(usize, String, String)>> {
    let mut sinks: Vec<(usize, String)> = Vec::new();
    let mut randoms: Vec<(usize, String)> = Vec::new();
    for pc in manifest.plan.iter().skip(1) {
        if let ProcKind::Spec(snap) = &pc.kind {
            if !snap.enabled || snap.pathway != "score" {
                continue;
            }
            match snap.protocol.as_str() {
                "union-budget" => sinks.push((snap.k, pc.name.clone())),
                "random" => randoms.push((snap.k, pc.name.clone())),
                _ => {}
            }
        }
    }
    sinks.sort_by_key(|&(k, _)| k);
    randoms.sort_by_key(|&(k, _)| k);
    if sinks.is_empty() || sinks.len() != randoms.len() {
        return Err(HarnessError::config(
            "plan does not pair sink and random conditions per budget",
        ));
    }
    sinks
        .into_iter()
        .zip(randoms)
        .map(|((ks, s), (kr, r))| {
            if ks != kr {
                return Err(HarnessError::config(format!(
                    "sink budget {ks} unmatched by random budget {kr}"
                )));
            }
            Ok((ks, s, r))
        })
        .collect()
}

pub fn analyze(
    manifest: &ExperimentManifest,
    records: &[RunRecord],
    out_dir: &Path,
) -> Result<()> {
    let cfg = &manifest.config;
    if !cfg.metric_enabled("alignment") {
        return Err(HarnessError::config(
            "specificity analysis needs the alignment metric",
        ));
    }
    let baseline = manifest.plan[0].name.clone();
    let budgets = plan_budgets(manifest)?;
    let mut metrics = vec!["alignment"];
    if cfg.metric_enabled("perceptual") {
        metrics.push("perceptual");
    }

    let mut table = Table::new(vec![
        "k",
        "metric",
        "n",
        "dod_mean",
        "ci_low",
        "ci_high",
        "p_t",
        "p_holm",
        "p_boot_neg",
    ]);
    // gaps[metric][budget index] in budget order.
    let mut gaps: Vec<Vec<DoDResult>> = Vec::new();
    for metric in &metrics {
        let mut per_budget = Vec::new();
        for (_, sink, rand) in &budgets {
            per_budget.push(specificity_gap(records, sink, rand, metric, &baseline, cfg)?);
        }
        gaps.push(per_budget);
    }
    for (mi, metric) in metrics.iter().enumerate() {
        let raw: Vec<f64> = gaps[mi]
            .iter()
            .map(|g| {
                g.stat
                    .p_t
                    .ok_or_else(|| HarnessError::runtime("gap stat lacks a t p-value"))
            })
            .collect::<Result<_>>()?;
        let adjusted = holm_correction(&raw)?;
        for (bi, (k, _, _)) in budgets.iter().enumerate() {
            let stat = &gaps[mi][bi].stat;
            table.push_row(vec![
                k.to_string(),
                metric.to_string(),
                stat.n.to_string(),
                fmt_f64(stat.mean),
                fmt_f64(stat.ci_low),
                fmt_f64(stat.ci_high),
                fmt_f64(raw[bi]),
                fmt_f64(adjusted[bi]),
                fmt_f64(stat.p_one_sided_neg),
            ])?;
        }
    }
    table.write(&out_dir.join(GAP_TABLE))?;

    // Trend: does the gap at the widest budget differ from the narrowest?
    let mut trend = Table::new(vec![
        "metric",
        "k_high",
        "k_ref",
        "n",
        "mean",
        "ci_low",
        "ci_high",
        "p_t",
        "p_boot_neg",
    ]);
    let (k_ref, sink_ref, _) = budgets.first().expect("non-empty").clone();
    let (k_high, _, _) = *budgets.last().expect("non-empty");
    let keys: Vec<PairKey> = keyed_alignment_deltas(records, &baseline, &sink_ref)?
        .into_iter()
        .map(|(k, _)| k)
        .collect();
    for (mi, metric) in metrics.iter().enumerate() {
        let stat = budget_trend(
            gaps[mi].last().expect("non-empty"),
            gaps[mi].first().expect("non-empty"),
            &keys,
            cfg,
            &format!("{metric}-k{k_high}-vs-k{k_ref}"),
        )?;
        trend.push_row(vec![
            metric.to_string(),
            k_high.to_string(),
            k_ref.to_string(),
            stat.n.to_string(),
            fmt_f64(stat.mean),
            fmt_f64(stat.ci_low),
            fmt_f64(stat.ci_high),
            stat.p_t.map_or(String::new(), fmt_f64),
            fmt_f64(stat.p_one_sided_neg),
        ])?;
    }
    trend.write(&out_dir.join(TREND_TABLE))?;

    let mut collisions = Table::new(vec!["k", "collision_rate"]);
    for (k, _, rand) in &budgets {
        let rate = mean_collision_rate(records, rand).ok_or_else(|| {
            HarnessError::runtime(format!("random condition '{rand}' logged no collision rate"))
        })?;
        collisions.push_row(vec![k.to_string(), fmt_f64(rate)])?;
    }
    collisions.write(&out_dir.join(COLLISION_TABLE))?;

    let ai = 0; // alignment is always metrics[0]
    let mut chart = LineChart::new("specificity gap by budget", "k", "sink minus random delta");
    chart.push(Series::new(
        "mean",
        budgets.iter().enumerate().map(|(i, (k, _, _))| (*k as f64, gaps[ai][i].stat.mean)).collect(),
    ));
    chart.push(Series::new(
        "ci_low",
        budgets.iter().enumerate().map(|(i, (k, _, _))| (*k as f64, gaps[ai][i].stat.ci_low)).collect(),
    ));
    chart.push(Series::new(
        "ci_high",
        budgets.iter().enumerate().map(|(i, (k, _, _))| (*k as f64, gaps[ai][i].stat.ci_high)).collect(),
    ));
    chart.write(&out_dir.join(GAP_PLOT))?;

    let raw_alignment: Vec<f64> = gaps[ai].iter().map(|g| g.stat.p_t.unwrap_or(1.0)).collect();
    let holm_alignment = holm_correction(&raw_alignment)?;
    let hurt_more = budgets
        .iter()
        .enumerate()
        .filter(|&(i, _)| gaps[ai][i].stat.mean < 0.0 && holm_alignment[i] < 0.05)
        .count();
    let mut summary = Summary::new("Sink specificity");
    summary.note(format!(
        "{} prompts, seed-paired against '{}'. At each budget the head-averaged union sink \
         set and an equal-budget uniform-random token set are fully ablated on the score \
         path, middle layer; the gap is (sink - reference) minus (random - reference). \
         Holm correction runs across the {} budgets within each metric.",
        cfg.prompts.count,
        baseline,
        budgets.len()
    ));
    summary.add(
        "Does targeting the sinks hurt alignment more than random ablation?",
        format!(
            "{} of {} budgets show a negative gap with Holm-corrected p below 0.05; see {}.",
            hurt_more,
            budgets.len(),
            GAP_TABLE
        ),
    );
    let tstat = budget_trend(
        gaps[ai].last().expect("non-empty"),
        gaps[ai].first().expect("non-empty"),
        &keys,
        cfg,
        &format!("alignment-k{k_high}-vs-k{k_ref}"),
    )?;
    summary.add(
        "Does the gap widen with budget?",
        format!(
            "Gap at k={k_high} minus gap at k={k_ref}: {} with CI {}; negative means the \
             wider budget separates sink and random ablation further.",
            fmt_f64(tstat.mean),
            format!("[{}, {}]", fmt_f64(tstat.ci_low), fmt_f64(tstat.ci_high))
        ),
    );
    summary.add(
        "How often did random sets touch actual sinks?",
        format!("Collision rates by budget sit in {}.", COLLISION_TABLE),
    );
    summary.write(&out_dir.join(SUMMARY))?;
    Ok(())
}
