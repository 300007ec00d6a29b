//! Budget family: full score-path ablation of head-averaged union sink
//! sets at increasing budgets, Holm-corrected across the grid.

use std::path::Path;

use crate::analysis::{
    alignment_contrast, frechet_between, perceptual_stat, resolve_margin, verdict,
    verification_summary,
};
use crate::config::{ConditionSection, ExperimentConfig, LayerSetting};
use crate::error::{HarnessError, Result};
use crate::records::RunRecord;
use crate::runner::{prepare, ExperimentManifest, PlannedCondition, ProcKind, VERIFICATION_FLOOR};
use crate::svg::{LineChart, Series};
use crate::tables::{fmt_f64, Summary, Table};
use sinklab_core::stats::holm_correction;

pub const BUDGET_TABLE: &str = "budget_sweep.csv";
pub const BUDGET_PLOT: &str = "budget_curve.svg";
pub const SUMMARY: &str = "summary.md";

pub const DEFAULT_BUDGETS: [usize; 5] = [1, 5, 10, 20, 50];

pub fn budget_condition_name(k: usize) -> String {
    format!("budget_{k}")
}

fn budget_section(k: usize) -> ConditionSection {
    let mut c = ConditionSection::baseline();
    c.name = budget_condition_name(k);
    c.pathway = "score".into();
    c.eta = 0.0;
    c.k = k;
    c.protocol = "union-budget".into();
    c.layers = LayerSetting::Named("middle".into());
    c
}

pub fn validate_budgets(budgets: &[usize], n_tokens: usize) -> Result<Vec<usize>> {
    if budgets.is_empty() {
        return Err(HarnessError::config("empty budget grid"));
    }
    let mut sorted = budgets.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &k in &sorted {
        if k == 0 || k > n_tokens {
            return Err(HarnessError::config(format!(
                "budget {k} outside 1..={n_tokens}"
            )));
        }
    }
    Ok(sorted)
}

pub fn run(cfg: ExperimentConfig, budgets: Option<Vec<usize>>, out_dir: &Path) -> Result<()> {
    super::require_margin_inputs(&cfg)?;
    let model = cfg.model.to_model_config()?;
    let budgets = validate_budgets(
        &budgets.unwrap_or_else(|| DEFAULT_BUDGETS.to_vec()),
        model.n_tokens(),
    )?;
    let baseline = cfg.conditions[0].name.clone();
    let mut plan = vec![PlannedCondition::observer(&baseline)];
    for &k in &budgets {
        let sec = budget_section(k);
        plan.push(PlannedCondition::from_spec(&sec.name, &sec.to_spec(&model)?));
    }
    if cfg.stats.equivalence_margin.is_auto() {
        plan.push(super::seedvar_condition(&cfg));
    }
    let prepared = prepare("ksweep", cfg, plan)?;
    super::run_and_analyze(&prepared, out_dir, analyze)
}

pub fn analyze(
    manifest: &ExperimentManifest,
    records: &[RunRecord],
    out_dir: &Path,
) -> Result<()> {
    let cfg = &manifest.config;
    if !cfg.metric_enabled("alignment") {
        return Err(HarnessError::config("budget analysis needs the alignment metric"));
    }
    let baseline = manifest.plan[0].name.clone();
    let margin = resolve_margin(records, cfg, &baseline, super::SEEDVAR)?;

    let mut budgets: Vec<(usize, String)> = Vec::new();
    for pc in manifest.plan.iter().skip(1) {
        if let ProcKind::Spec(snap) = &pc.kind {
            if snap.enabled && snap.pathway == "score" && snap.protocol == "union-budget" {
                budgets.push((snap.k, pc.name.clone()));
            }
        }
    }
    if budgets.is_empty() {
        return Err(HarnessError::config("plan holds no union-budget grid"));
    }
    budgets.sort_by_key(|&(k, _)| k);

    struct Row {
        k: usize,
        stat: sinklab_core::stats::PairedStat,
        perceptual: Option<sinklab_core::stats::PairedStat>,
        frechet: Option<f64>,
        mass: Option<(f64, f64)>,
        verdict: String,
    }
    let mut rows = Vec::new();
    for (k, name) in &budgets {
        let stat = alignment_contrast(records, &baseline, name, cfg)?;
        let v = verdict(&stat, margin)?;
        let perceptual = if cfg.metric_enabled("perceptual") {
            Some(perceptual_stat(records, name, cfg)?)
        } else {
            None
        };
        let frechet = if cfg.metric_enabled("frechet") {
            Some(frechet_between(records, &baseline, name)?)
        } else {
            None
        };
        let mass = verification_summary(records, name, VERIFICATION_FLOOR)?
            .map(|s| (s.mass_before_mean, s.mass_after_mean));
        rows.push(Row {
            k: *k,
            stat,
            perceptual,
            frechet,
            mass,
            verdict: v.name().to_string(),
        });
    }
    // One Holm family: the alignment tests across budgets.
    let raw: Vec<f64> = rows
        .iter()
        .map(|r| {
            r.stat.p_t.ok_or_else(|| {
                HarnessError::runtime("budget contrast lacks a t p-value")
            })
        })
        .collect::<Result<_>>()?;
    let adjusted = holm_correction(&raw)?;

    let mut table = Table::new(vec![
        "k",
        "mass_before",
        "mass_after",
        "n",
        "mean",
        "ci_low",
        "ci_high",
        "p_t",
        "p_holm",
        "p_boot_neg",
        "perceptual_mean",
        "perceptual_ci_low",
        "perceptual_ci_high",
        "frechet",
        "verdict",
    ]);
    for (row, p_holm) in rows.iter().zip(&adjusted) {
        table.push_row(vec![
            row.k.to_string(),
            row.mass.map_or(String::new(), |m| fmt_f64(m.0)),
            row.mass.map_or(String::new(), |m| fmt_f64(m.1)),
            row.stat.n.to_string(),
            fmt_f64(row.stat.mean),
            fmt_f64(row.stat.ci_low),
            fmt_f64(row.stat.ci_high),
            row.stat.p_t.map_or(String::new(), fmt_f64),
            fmt_f64(*p_holm),
            fmt_f64(row.stat.p_one_sided_neg),
            row.perceptual.as_ref().map_or(String::new(), |p| fmt_f64(p.mean)),
            row.perceptual.as_ref().map_or(String::new(), |p| fmt_f64(p.ci_low)),
            row.perceptual.as_ref().map_or(String::new(), |p| fmt_f64(p.ci_high)),
            row.frechet.map_or(String::new(), fmt_f64),
            row.verdict.clone(),
        ])?;
    }
    table.write(&out_dir.join(BUDGET_TABLE))?;

    let mut chart = LineChart::new("alignment delta by sink budget", "k", "delta");
    chart.push(Series::new(
        "mean",
        rows.iter().map(|r| (r.k as f64, r.stat.mean)).collect(),
    ));
    chart.push(Series::new(
        "ci_low",
        rows.iter().map(|r| (r.k as f64, r.stat.ci_low)).collect(),
    ));
    chart.push(Series::new(
        "ci_high",
        rows.iter().map(|r| (r.k as f64, r.stat.ci_high)).collect(),
    ));
    chart.write(&out_dir.join(BUDGET_PLOT))?;

    let flat = rows.iter().all(|r| super::ci_includes_zero(&r.stat));
    let significant = adjusted.iter().filter(|&&p| p < 0.05).count();
    let mut summary = Summary::new("Sink-budget sweep");
    summary.note(format!(
        "{} prompts, seed-paired against '{}'. Budgets ablate the head-averaged union sink \
         set (score path, full attenuation) on the middle layer; p-values are Holm-corrected \
         across the {} budgets. Equivalence margin {}.",
        cfg.prompts.count,
        baseline,
        rows.len(),
        fmt_f64(margin)
    ));
    summary.add(
        "Does widening the sink budget change alignment?",
        format!(
            "{}. {} of {} budgets show a Holm-corrected paired-t p below 0.05; alignment-delta \
             CIs {} zero everywhere.",
            if flat { "No" } else { "Yes" },
            significant,
            rows.len(),
            if flat { "contain" } else { "do not all contain" }
        ),
    );
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        summary.add(
            "How much mass did the largest budget remove?",
            format!(
                "Budget {} carried {} pre-intervention mass (verified to {} after); budget {} \
                 carried {}.",
                last.k,
                last.mass.map_or("n/a".to_string(), |m| fmt_f64(m.0)),
                last.mass.map_or("n/a".to_string(), |m| fmt_f64(m.1)),
                first.k,
                first.mass.map_or("n/a".to_string(), |m| fmt_f64(m.0))
            ),
        );
    }
    summary.write(&out_dir.join(SUMMARY))?;
    Ok(())
}
