//! Dose-response family: score-path attenuation over an eta grid plus the
//! value-path replacement grid, all seed-paired against one reference.

use std::path::Path;

use crate::analysis::{
    alignment_contrast, frechet_between, perceptual_stat, resolve_margin, verdict,
    verification_summary,
};
use crate::config::{ConditionSection, ExperimentConfig, LayerSetting};
use crate::error::{HarnessError, Result};
use crate::records::RunRecord;
use crate::runner::{prepare, ExperimentManifest, PlannedCondition, VERIFICATION_FLOOR};
use crate::svg::{LineChart, Series};
use crate::tables::{fmt_f64, Summary, Table};
use sinklab_core::stats::PairedStat;

pub const ETA_TABLE: &str = "eta_sweep.csv";
pub const VALUE_TABLE: &str = "value_sweep.csv";
pub const DOSE_PLOT: &str = "dose_response.svg";
pub const MASS_PLOT: &str = "mass_after_by_eta.svg";
pub const SUMMARY: &str = "summary.md";

pub const DEFAULT_ETAS: [f64; 6] = [1.0, 0.5, 0.25, 0.1, 0.01, 0.0];

/// The value-path grid: full replacement by zeros, by the mean token, and
/// the half-way interpolation; lerp at alpha 1 would be the identity.
const VALUE_GRID: [(&str, &str, f64); 4] = [
    ("value_lerp_0.5", "lerp", 0.5),
    ("value_lerp_0", "lerp", 0.0),
    ("value_mean", "mean", 0.5),
    ("value_zero", "zero", 0.5),
];

pub fn eta_condition_name(eta: f64) -> String {
    format!("eta_{}", fmt_f64(eta))
}

fn score_section(name: &str, eta: f64) -> ConditionSection {
    let mut c = ConditionSection::baseline();
    c.name = name.to_string();
    c.pathway = "score".into();
    c.eta = eta;
    c.k = 1;
    c.layers = LayerSetting::Named("middle".into());
    c
}

fn value_section(name: &str, mode: &str, alpha: f64) -> ConditionSection {
    let mut c = ConditionSection::baseline();
    c.name = name.to_string();
    c.pathway = "value".into();
    c.value_mode = mode.to_string();
    c.alpha = alpha;
    c.k = 1;
    c.layers = LayerSetting::Named("middle".into());
    c
}

pub fn run(cfg: ExperimentConfig, etas: Option<Vec<f64>>, out_dir: &Path) -> Result<()> {
    super::require_margin_inputs(&cfg)?;
    let mut etas = etas.unwrap_or_else(|| DEFAULT_ETAS.to_vec());
    for &e in &etas {
        if !e.is_finite() || !(0.0..=1.0).contains(&e) {
            return Err(HarnessError::config(format!("eta {e} outside [0, 1]")));
        }
    }
    etas.sort_by(|a, b| b.partial_cmp(a).expect("finite etas"));
    etas.dedup();
    if etas.is_empty() {
        return Err(HarnessError::config("empty eta grid"));
    }
    let model = cfg.model.to_model_config()?;
    let baseline = cfg.conditions[0].name.clone();
    let mut plan = vec![PlannedCondition::observer(&baseline)];
    for &eta in &etas {
        let sec = score_section(&eta_condition_name(eta), eta);
        plan.push(PlannedCondition::from_spec(&sec.name, &sec.to_spec(&model)?));
    }
    for (name, mode, alpha) in VALUE_GRID {
        let sec = value_section(name, mode, alpha);
        plan.push(PlannedCondition::from_spec(name, &sec.to_spec(&model)?));
    }
    if cfg.stats.equivalence_margin.is_auto() {
        plan.push(super::seedvar_condition(&cfg));
    }
    let prepared = prepare("sweep", cfg, plan)?;
    super::run_and_analyze(&prepared, out_dir, analyze)
}

struct GridRow {
    stat: PairedStat,
    perceptual: Option<PairedStat>,
    frechet: Option<f64>,
    verdict: String,
}

fn grid_row(
    records: &[RunRecord],
    cfg: &ExperimentConfig,
    baseline: &str,
    name: &str,
    margin: f64,
) -> Result<GridRow> {
    let stat = alignment_contrast(records, baseline, name, cfg)?;
    let v = verdict(&stat, margin)?;
    let perceptual = if cfg.metric_enabled("perceptual") {
        Some(perceptual_stat(records, name, cfg)?)
    } else {
        None
    };
    let frechet = if cfg.metric_enabled("frechet") {
        Some(frechet_between(records, baseline, name)?)
    } else {
        None
    };
    Ok(GridRow {
        stat,
        perceptual,
        frechet,
        verdict: v.name().to_string(),
    })
}

fn grid_cells(row: &GridRow) -> Vec<String> {
    [
        super::stat_cells(&row.stat),
        vec![
            row.perceptual.as_ref().map_or(String::new(), |p| fmt_f64(p.mean)),
            row.perceptual.as_ref().map_or(String::new(), |p| fmt_f64(p.ci_low)),
            row.perceptual.as_ref().map_or(String::new(), |p| fmt_f64(p.ci_high)),
            row.frechet.map_or(String::new(), fmt_f64),
            row.verdict.clone(),
        ],
    ]
    .concat()
}

const GRID_COLUMNS: [&str; 11] = [
    "n",
    "mean",
    "ci_low",
    "ci_high",
    "p_t",
    "p_boot_neg",
    "perceptual_mean",
    "perceptual_ci_low",
    "perceptual_ci_high",
    "frechet",
    "verdict",
];

pub fn analyze(
    manifest: &ExperimentManifest,
    records: &[RunRecord],
    out_dir: &Path,
) -> Result<()> {
    let cfg = &manifest.config;
    if !cfg.metric_enabled("alignment") {
        return Err(HarnessError::config("sweep analysis needs the alignment metric"));
    }
    let baseline = manifest.plan[0].name.clone();
    let margin = resolve_margin(records, cfg, &baseline, super::SEEDVAR)?;

    // Recover the grids from the persisted plan.
    let mut etas: Vec<(f64, String)> = Vec::new();
    let mut values: Vec<(String, f64, String)> = Vec::new();
    for pc in manifest.plan.iter().skip(1) {
        if let crate::runner::ProcKind::Spec(snap) = &pc.kind {
            if !snap.enabled {
                continue;
            }
            match snap.pathway.as_str() {
                "score" => etas.push((snap.eta, pc.name.clone())),
                "value" => values.push((snap.value_mode.clone(), snap.alpha, pc.name.clone())),
                _ => {}
            }
        }
    }
    if etas.is_empty() {
        return Err(HarnessError::config("plan holds no score-path grid"));
    }
    etas.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite etas"));

    let mut eta_table = Table::new(
        [
            vec!["eta".to_string(), "mass_before".to_string(), "mass_after".to_string()],
            GRID_COLUMNS.iter().map(|s| s.to_string()).collect(),
        ]
        .concat(),
    );
    let mut eta_rows: Vec<(f64, GridRow, Option<(f64, f64)>)> = Vec::new();
    for (eta, name) in &etas {
        let row = grid_row(records, cfg, &baseline, name, margin)?;
        let mass = verification_summary(records, name, VERIFICATION_FLOOR)?
            .map(|v| (v.mass_before_mean, v.mass_after_mean));
        eta_table.push_row(
            [
                vec![
                    fmt_f64(*eta),
                    mass.map_or(String::new(), |m| fmt_f64(m.0)),
                    mass.map_or(String::new(), |m| fmt_f64(m.1)),
                ],
                grid_cells(&row),
            ]
            .concat(),
        )?;
        eta_rows.push((*eta, row, mass));
    }
    eta_table.write(&out_dir.join(ETA_TABLE))?;

    let mut value_table = Table::new(
        [
            vec!["mode".to_string(), "alpha".to_string()],
            GRID_COLUMNS.iter().map(|s| s.to_string()).collect(),
        ]
        .concat(),
    );
    let mut value_rows: Vec<GridRow> = Vec::new();
    for (mode, alpha, name) in &values {
        let row = grid_row(records, cfg, &baseline, name, margin)?;
        value_table.push_row(
            [vec![mode.clone(), fmt_f64(*alpha)], grid_cells(&row)].concat(),
        )?;
        value_rows.push(row);
    }
    value_table.write(&out_dir.join(VALUE_TABLE))?;

    // Flatness: every CI in the sub-grid contains zero.
    let score_flat = eta_rows.iter().all(|(_, r, _)| super::ci_includes_zero(&r.stat));
    let value_flat =
        !value_rows.is_empty() && value_rows.iter().all(|r| super::ci_includes_zero(&r.stat));
    let all_equivalent = eta_rows.iter().all(|(_, r, _)| r.verdict == "equivalent")
        && value_rows.iter().all(|r| r.verdict == "equivalent");

    let mut dose = LineChart::new("alignment delta by score attenuation", "eta", "delta");
    dose.push(Series::new(
        "mean",
        eta_rows.iter().map(|(e, r, _)| (*e, r.stat.mean)).collect(),
    ));
    dose.push(Series::new(
        "ci_low",
        eta_rows.iter().map(|(e, r, _)| (*e, r.stat.ci_low)).collect(),
    ));
    dose.push(Series::new(
        "ci_high",
        eta_rows.iter().map(|(e, r, _)| (*e, r.stat.ci_high)).collect(),
    ));
    dose.write(&out_dir.join(DOSE_PLOT))?;

    let mass_points: Vec<(f64, f64, f64)> = eta_rows
        .iter()
        .filter_map(|(e, _, m)| m.map(|(b, a)| (*e, b, a)))
        .collect();
    if !mass_points.is_empty() {
        let mut mass_chart = LineChart::new("verified sink mass by eta", "eta", "mass");
        mass_chart.push(Series::new(
            "before",
            mass_points.iter().map(|&(e, b, _)| (e, b)).collect(),
        ));
        mass_chart.push(Series::new(
            "after",
            mass_points.iter().map(|&(e, _, a)| (e, a)).collect(),
        ));
        mass_chart.write(&out_dir.join(MASS_PLOT))?;
    }

    let mut summary = Summary::new("Dose-response sweep");
    summary.note(format!(
        "{} prompts, seed-paired against '{}'. Score grid of {} attenuation levels on the \
         middle layer (per-head top-1 sinks), value grid of {} replacement modes. \
         Equivalence margin {}.",
        cfg.prompts.count,
        baseline,
        eta_rows.len(),
        value_rows.len(),
        fmt_f64(margin)
    ));
    summary.add(
        "Is the score-path dose-response flat?",
        format!(
            "{}. Alignment-delta CIs {} zero at every attenuation level; the strongest dose \
             (eta 0) moved alignment by {} with CI {}.",
            if score_flat { "Yes" } else { "No" },
            if score_flat { "all contain" } else { "do not all contain" },
            fmt_f64(eta_rows.last().map(|(_, r, _)| r.stat.mean).unwrap_or(0.0)),
            eta_rows.last().map(|(_, r, _)| super::fmt_ci(&r.stat)).unwrap_or_default()
        ),
    );
    summary.add(
        "Is the value-path grid flat?",
        format!(
            "{}. {} of {} replacement modes hold alignment-delta CIs containing zero.",
            if value_flat { "Yes" } else { "No" },
            value_rows.iter().filter(|r| super::ci_includes_zero(&r.stat)).count(),
            value_rows.len()
        ),
    );
    summary.add(
        "Are all deltas equivalent to zero within the margin?",
        format!(
            "{}; see verdict columns in {} and {}.",
            if all_equivalent { "Yes" } else { "No" },
            ETA_TABLE,
            VALUE_TABLE
        ),
    );
    if let (Some(first), Some(last)) = (mass_points.first(), mass_points.last()) {
        summary.add(
            "Did the interventions actually reduce sink mass?",
            format!(
                "Verified mean sink mass after intervention runs from {} at eta {} down to {} \
                 at eta {}; pre-intervention mass sits near {}.",
                fmt_f64(first.2),
                fmt_f64(first.0),
                fmt_f64(last.2),
                fmt_f64(last.0),
                fmt_f64(first.1)
            ),
        );
    }
    summary.write(&out_dir.join(SUMMARY))?;
    Ok(())
}
