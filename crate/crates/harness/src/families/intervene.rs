//! Intervention family: run the configured conditions seed-paired against
//! the reference and report effect sizes, verification, and equivalence.

use std::path::Path;

use crate::analysis::{
    alignment_contrast, frechet_between, mass_by_step, mean_active_fraction, perceptual_stat,
    resolve_margin, verdict, verification_summary,
};
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::records::RunRecord;
use crate::runner::{prepare, ExperimentManifest, PlannedCondition, VERIFICATION_FLOOR};
use crate::svg::{LineChart, Series};
use crate::tables::{fmt_f64, Summary, Table};

pub const EFFECTS_TABLE: &str = "effects.csv";
pub const VERIFICATION_TABLE: &str = "verification.csv";
pub const SUPPRESSION_PLOT: &str = "suppression_by_step.svg";
pub const SUMMARY: &str = "summary.md";

pub fn run(cfg: ExperimentConfig, out_dir: &Path) -> Result<()> {
    if cfg.conditions.len() < 2 {
        return Err(HarnessError::config(
            "intervene needs at least one condition beyond the reference",
        ));
    }
    super::require_margin_inputs(&cfg)?;
    let model = cfg.model.to_model_config()?;
    let mut plan = Vec::new();
    for sec in &cfg.conditions {
        plan.push(PlannedCondition::from_spec(&sec.name, &sec.to_spec(&model)?));
    }
    if cfg.stats.equivalence_margin.is_auto() {
        plan.push(super::seedvar_condition(&cfg));
    }
    let prepared = prepare("intervene", cfg, plan)?;
    super::run_and_analyze(&prepared, out_dir, analyze)
}

/// Conditions under analysis: everything except the reference and the
/// seed-variation column.
fn contrast_conditions(manifest: &ExperimentManifest) -> Vec<String> {
    manifest
        .plan
        .iter()
        .skip(1)
        .filter(|p| p.name != super::SEEDVAR)
        .map(|p| p.name.clone())
        .collect()
}

pub fn analyze(
    manifest: &ExperimentManifest,
    records: &[RunRecord],
    out_dir: &Path,
) -> Result<()> {
    let cfg = &manifest.config;
    let baseline = manifest.plan[0].name.clone();
    let conditions = contrast_conditions(manifest);
    if conditions.is_empty() {
        return Err(HarnessError::config("no conditions to contrast"));
    }
    let margin = if cfg.metric_enabled("alignment") {
        Some(resolve_margin(records, cfg, &baseline, super::SEEDVAR)?)
    } else {
        None
    };

    let mut effects = Table::new(
        [
            vec!["condition".to_string(), "metric".to_string()],
            super::STAT_COLUMNS.iter().map(|s| s.to_string()).collect(),
            vec!["margin".to_string(), "verdict".to_string()],
        ]
        .concat(),
    );
    let mut summary = Summary::new("Intervention effects");
    summary.note(format!(
        "{} prompts, seed-paired against '{}'. Proxy metrics; equivalence margin {}.",
        cfg.prompts.count,
        baseline,
        margin.map_or("n/a".to_string(), fmt_f64)
    ));

    for cond in &conditions {
        if let Some(m) = margin {
            let stat = alignment_contrast(records, &baseline, cond, cfg)?;
            let v = verdict(&stat, m)?;
            effects.push_row(
                [
                    vec![cond.clone(), "alignment".to_string()],
                    super::stat_cells(&stat),
                    vec![fmt_f64(m), v.name().to_string()],
                ]
                .concat(),
            )?;
            summary.add(
                format!("Did '{cond}' change text alignment?"),
                format!(
                    "Mean delta {} with {}% CI {}; paired t p = {}; verdict against the \
                     margin: {}.",
                    fmt_f64(stat.mean),
                    fmt_f64(cfg.stats.ci_level * 100.0),
                    super::fmt_ci(&stat),
                    stat.p_t.map_or("n/a".to_string(), fmt_f64),
                    v.name()
                ),
            );
        }
        if cfg.metric_enabled("perceptual") {
            let stat = perceptual_stat(records, cond, cfg)?;
            effects.push_row(
                [
                    vec![cond.clone(), "perceptual".to_string()],
                    super::stat_cells(&stat),
                    vec![String::new(), String::new()],
                ]
                .concat(),
            )?;
            summary.add(
                format!("Did '{cond}' move the image?"),
                format!(
                    "Mean perceptual distance to the reference {} with {}% CI {}.",
                    fmt_f64(stat.mean),
                    fmt_f64(cfg.stats.ci_level * 100.0),
                    super::fmt_ci(&stat)
                ),
            );
        }
        if cfg.metric_enabled("frechet") {
            let shift = frechet_between(records, &baseline, cond)?;
            effects.push_row(vec![
                cond.clone(),
                "frechet".to_string(),
                String::new(),
                fmt_f64(shift),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
        let frac = mean_active_fraction(records, cond)?;
        summary.add(
            format!("How much of the trajectory did '{cond}' touch?"),
            format!("The step gate was open for {} of denoising steps.", fmt_f64(frac)),
        );
    }
    effects.write(&out_dir.join(EFFECTS_TABLE))?;

    let mut verif = Table::new(vec![
        "condition",
        "n_sites",
        "mass_before_mean",
        "mass_after_mean",
        "min_factor",
        "floor",
        "all_above_floor",
    ]);
    let mut any_verified = false;
    let mut chart = LineChart::new("verified sink mass by step", "step", "mass");
    for cond in &conditions {
        if let Some(vs) = verification_summary(records, cond, VERIFICATION_FLOOR)? {
            any_verified = true;
            verif.push_row(vec![
                cond.clone(),
                vs.n_sites.to_string(),
                fmt_f64(vs.mass_before_mean),
                fmt_f64(vs.mass_after_mean),
                fmt_f64(vs.min_factor),
                fmt_f64(VERIFICATION_FLOOR),
                vs.all_above_floor.to_string(),
            ])?;
            let by_step = mass_by_step(records, cond)?;
            chart.push(Series::new(
                format!("{cond} before"),
                by_step.iter().map(|&(s, b, _)| (s as f64, b)).collect(),
            ));
            chart.push(Series::new(
                format!("{cond} after"),
                by_step.iter().map(|&(s, _, a)| (s as f64, a)).collect(),
            ));
            summary.add(
                format!("Was '{cond}' mechanically verified?"),
                format!(
                    "{} attention sites re-measured; mean sink mass {} before, {} after; \
                     smallest reduction factor {} against floor {}.",
                    vs.n_sites,
                    fmt_f64(vs.mass_before_mean),
                    fmt_f64(vs.mass_after_mean),
                    fmt_f64(vs.min_factor),
                    fmt_f64(VERIFICATION_FLOOR)
                ),
            );
        }
    }
    verif.write(&out_dir.join(VERIFICATION_TABLE))?;
    if any_verified {
        chart.write(&out_dir.join(SUPPRESSION_PLOT))?;
    }
    summary.write(&out_dir.join(SUMMARY))?;
    Ok(())
}
