//! The experiment families behind the CLI subcommands. Each family is a
//! run phase (plan conditions, execute, persist records) plus a pure
//! analyze phase (records to tables, summary, plots); `report` re-runs
//! only the analyze phase from a persisted directory.

use sinklab_core::stats::PairedStat;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::records::RunRecord;
use crate::runner::{read_manifest, ExperimentManifest, PlannedCondition, Prepared};
use crate::tables::fmt_f64;
use std::path::Path;

pub mod calibrate;
pub mod intervene;
pub mod ksweep;
pub mod observe;
pub mod report;
pub mod robustness;
pub mod sanity;
pub mod specificity;
pub mod sweep;

/// Condition that reruns the reference at shifted seeds; its deltas against
/// the reference measure pure seed noise.
pub const SEEDVAR: &str = "baseline_seedvar";

pub(crate) fn seedvar_condition(cfg: &ExperimentConfig) -> PlannedCondition {
    let mut pc = PlannedCondition::observer(SEEDVAR);
    pc.seed_offset = cfg.prompts.count as u64;
    pc
}

/// Margin-auto needs the alignment metric and the seed-variation column.
pub(crate) fn require_margin_inputs(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.stats.equivalence_margin.is_auto() && !cfg.metric_enabled("alignment") {
        return Err(HarnessError::config(
            "equivalence_margin \"auto\" needs the alignment metric enabled",
        ));
    }
    Ok(())
}

/// Run phase shared by every family: execute, then analyze in place.
pub(crate) fn run_and_analyze(
    prepared: &Prepared,
    out_dir: &Path,
    analyze: impl Fn(&ExperimentManifest, &[RunRecord], &Path) -> Result<()>,
) -> Result<()> {
    let records = crate::runner::run(prepared, out_dir)?;
    let manifest = read_manifest(out_dir)?;
    analyze(&manifest, &records, out_dir)
}

pub(crate) fn stat_cells(stat: &PairedStat) -> Vec<String> {
    vec![
        stat.n.to_string(),
        fmt_f64(stat.mean),
        fmt_f64(stat.ci_low),
        fmt_f64(stat.ci_high),
        stat.p_t.map_or("".to_string(), fmt_f64),
        fmt_f64(stat.p_one_sided_neg),
    ]
}

pub(crate) const STAT_COLUMNS: [&str; 6] = ["n", "mean", "ci_low", "ci_high", "p_t", "p_boot_neg"];

/// CI containing zero (endpoints inclusive) is the flatness criterion.
pub(crate) fn ci_includes_zero(stat: &PairedStat) -> bool {
    stat.ci_low <= 0.0 && stat.ci_high >= 0.0
}

pub(crate) fn fmt_ci(stat: &PairedStat) -> String {
    format!("[{}, {}]", fmt_f64(stat.ci_low), fmt_f64(stat.ci_high))
}
