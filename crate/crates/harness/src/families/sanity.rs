//! Sanity family: the pre-registration gate every experiment day starts
//! with. A disabled intervention and a probing observer must both be
//! bit-identical to the bare model over many prompt pairs, and one active
//! contrast must visibly not be. Any failed check exits with the sanity
//! code after the table is written.

use std::collections::BTreeMap;
use std::path::Path;

use crate::analysis::by_condition;
use crate::config::{ConditionSection, ExperimentConfig, LayerSetting};
use crate::error::{HarnessError, Result};
use crate::records::RunRecord;
use crate::runner::{prepare, ExperimentManifest, PlannedCondition, VERIFICATION_FLOOR};
use crate::tables::{fmt_f64, Summary, Table};

pub const SANITY_TABLE: &str = "sanity.csv";
pub const SUMMARY: &str = "summary.md";

pub const BARE: &str = "bare";
pub const NOOP: &str = "noop";
pub const OBSERVER: &str = "observer";
pub const CONTRAST: &str = "contrast";
/// Probe and contrast columns run on this many prompts at most; the
/// bitwise no-op checks cover every pair.
const PROBE_PROMPTS: usize = 8;

pub fn run(cfg: ExperimentConfig, out_dir: &Path) -> Result<()> {
    let model = cfg.model.to_model_config()?;
    let probe_limit = cfg.prompts.count.min(PROBE_PROMPTS);
    let noop =
        PlannedCondition::from_spec(NOOP, &sinklab_core::intervene::InterventionSpec::disabled());
    let mut observer = PlannedCondition::observer(OBSERVER);
    observer.prompt_limit = Some(probe_limit);
    let mut contrast_sec = ConditionSection::baseline();
    contrast_sec.name = CONTRAST.into();
    contrast_sec.pathway = "score".into();
    contrast_sec.eta = 0.0;
    contrast_sec.k = 1;
    contrast_sec.layers = LayerSetting::Named("middle".into());
    let mut contrast = PlannedCondition::from_spec(CONTRAST, &contrast_sec.to_spec(&model)?);
    contrast.prompt_limit = Some(probe_limit);

    let plan = vec![PlannedCondition::bare(BARE), noop, observer, contrast];
    let prepared = prepare("sanity", cfg, plan)?;
    super::run_and_analyze(&prepared, out_dir, analyze)
}

struct Check {
    name: &'static str,
    n: usize,
    pass: bool,
    detail: String,
}

fn digest_map<'a>(records: &'a [RunRecord], condition: &str) -> BTreeMap<u64, &'a str> {
    by_condition(records, condition)
        .into_iter()
        .map(|r| (r.prompt_id, r.image_digest.as_str()))
        .collect()
}

fn checks(records: &[RunRecord]) -> Result<Vec<Check>> {
    let bare = digest_map(records, BARE);
    if bare.is_empty() {
        return Err(HarnessError::runtime("no bare records"));
    }
    let mut out = Vec::new();

    let compare_digests = |name: &'static str, condition: &str| -> Check {
        let theirs = digest_map(records, condition);
        let mismatches: Vec<u64> = theirs
            .iter()
            .filter(|(id, d)| bare.get(id) != Some(d))
            .map(|(&id, _)| id)
            .collect();
        Check {
            name,
            n: theirs.len(),
            pass: !theirs.is_empty() && mismatches.is_empty(),
            detail: if mismatches.is_empty() {
                format!("{} image digests identical to bare", theirs.len())
            } else {
                format!("digests diverge on prompts {mismatches:?}")
            },
        }
    };
    out.push(compare_digests("noop_bitwise", NOOP));
    out.push(compare_digests("observer_bitwise", OBSERVER));

    let noop_rows = by_condition(records, NOOP);
    let nonzero: Vec<u64> = noop_rows
        .iter()
        .filter(|r| r.metrics.perceptual_vs_baseline != Some(0.0))
        .map(|r| r.prompt_id)
        .collect();
    out.push(Check {
        name: "noop_perceptual_zero",
        n: noop_rows.len(),
        pass: nonzero.is_empty(),
        detail: if nonzero.is_empty() {
            "perceptual distance exactly 0 on every pair".to_string()
        } else {
            format!("nonzero perceptual distance on prompts {nonzero:?}")
        },
    });

    let observer_rows = by_condition(records, OBSERVER);
    let missing_probes = observer_rows.iter().any(|r| r.probes.is_empty());
    out.push(Check {
        name: "observer_probes_present",
        n: observer_rows.len(),
        pass: !observer_rows.is_empty() && !missing_probes,
        detail: format!(
            "{} probe rows per record",
            observer_rows.first().map_or(0, |r| r.probes.len())
        ),
    });

    let contrast_rows = by_condition(records, CONTRAST);
    let unmoved: Vec<u64> = contrast_rows
        .iter()
        .filter(|r| bare.get(&r.prompt_id) == Some(&r.image_digest.as_str()))
        .map(|r| r.prompt_id)
        .collect();
    out.push(Check {
        name: "contrast_moves_output",
        n: contrast_rows.len(),
        pass: !contrast_rows.is_empty() && unmoved.is_empty(),
        detail: if unmoved.is_empty() {
            "active ablation changed every image".to_string()
        } else {
            format!("ablation left prompts {unmoved:?} bit-identical")
        },
    });

    let mut worst = f64::INFINITY;
    let mut sites = 0usize;
    for r in &contrast_rows {
        for v in &r.verification {
            worst = worst.min(v.factor.as_f64());
            sites += 1;
        }
    }
    out.push(Check {
        name: "contrast_verified",
        n: sites,
        pass: sites > 0 && worst >= VERIFICATION_FLOOR,
        detail: format!(
            "smallest reduction factor {} over {sites} sites (floor {})",
            fmt_f64(worst),
            fmt_f64(VERIFICATION_FLOOR)
        ),
    });
    Ok(out)
}

pub fn analyze(
    manifest: &ExperimentManifest,
    records: &[RunRecord],
    out_dir: &Path,
) -> Result<()> {
    let all = checks(records)?;
    let mut table = Table::new(vec!["check", "n", "status", "detail"]);
    for c in &all {
        table.push_row(vec![
            c.name.to_string(),
            c.n.to_string(),
            if c.pass { "pass" } else { "fail" }.to_string(),
            c.detail.clone(),
        ])?;
    }
    table.write(&out_dir.join(SANITY_TABLE))?;

    let failed: Vec<&str> = all.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    let mut summary = Summary::new("Sanity gate");
    summary.note(format!(
        "{} no-op pairs; probe and contrast columns on the first {} prompts.",
        manifest.config.prompts.count,
        all.iter()
            .find(|c| c.name == "contrast_moves_output")
            .map_or(0, |c| c.n)
    ));
    summary.add(
        "Is the instrumented pipeline bit-identical to the bare model?",
        if failed.is_empty() {
            format!(
                "Yes. All {} checks pass; a disabled intervention and a probing observer \
                 reproduce bare images exactly, and the active contrast does not.",
                all.len()
            )
        } else {
            format!("No. Failed checks: {}.", failed.join(", "))
        },
    );
    summary.write(&out_dir.join(SUMMARY))?;

    if !failed.is_empty() {
        return Err(HarnessError::sanity(format!(
            "{} of {} checks failed: {}",
            failed.len(),
            all.len(),
            failed.join(", ")
        )));
    }
    Ok(())
}
