//! Seed-paired run execution.
//!
//! A run plan is an ordered list of conditions; every condition sees the
//! same prompts, and prompt i always generates from seed base_seed + i
//! (plus a per-condition offset used only by the calibration comparisons).
//! The first condition is the reference: later conditions' perceptual
//! distances are measured against its images. Prompts execute in parallel
//! chunks; records land in deterministic (prompt, condition) order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sinklab_core::intervene::{
    active_fraction, DynamicSinkProcessor, IdentityProcessor, InterventionSpec,
};
use sinklab_core::proxymetrics::{alignment_proxy, feature_projection, perceptual_distance};
use sinklab_core::toymodel::{build_model, Model, ModelConfig, Prompt, StepRule};
use std::path::Path;
use std::time::Instant;

use crate::config::{hash_json, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::prompts::build_prompts;
use crate::records::{
    append_records, complete_prompt_groups, image_digest, outcome_rows, read_records,
    MetricsBlock, RunRecord, SpecSnapshot, RECORDS_FILE, SCHEMA_VERSION, TOOLKIT_VERSION,
};

pub const EXPERIMENT_FILE: &str = "experiment.json";
pub const FAILURES_FILE: &str = "failures.json";
/// Prompts covered by the pre-run no-op gate every family executes.
const GATE_PROMPTS: usize = 4;
/// Minimum per-site reduction factor a score-path full ablation must show.
pub const VERIFICATION_FLOOR: f64 = 1e6;

/// How a planned condition drives the model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub enum ProcKind {
    /// No processor installed at all.
    Bare,
    /// A DynamicSinkProcessor built from this spec.
    Spec(SpecSnapshot),
}

/// One column of the run matrix.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlannedCondition {
    pub name: String,
    pub kind: ProcKind,
    /// Added to the per-prompt seed; nonzero only for seed-variation
    /// calibration columns.
    pub seed_offset: u64,
    /// Step-rule override for scheduler-variant calibration columns.
    pub step_rule: Option<String>,
    /// Run only the first n prompts (None = all).
    pub prompt_limit: Option<usize>,
}

impl PlannedCondition {
    pub fn observer(name: &str) -> Self {
        PlannedCondition {
            name: name.to_string(),
            kind: ProcKind::Spec(SpecSnapshot::from_spec(&InterventionSpec::observer())),
            seed_offset: 0,
            step_rule: None,
            prompt_limit: None,
        }
    }

    pub fn from_spec(name: &str, spec: &InterventionSpec) -> Self {
        PlannedCondition {
            name: name.to_string(),
            kind: ProcKind::Spec(SpecSnapshot::from_spec(spec)),
            seed_offset: 0,
            step_rule: None,
            prompt_limit: None,
        }
    }

    pub fn bare(name: &str) -> Self {
        PlannedCondition {
            name: name.to_string(),
            kind: ProcKind::Bare,
            seed_offset: 0,
            step_rule: None,
            prompt_limit: None,
        }
    }

    fn snapshot(&self) -> SpecSnapshot {
        match &self.kind {
            ProcKind::Bare => SpecSnapshot::bare(),
            ProcKind::Spec(s) => s.clone(),
        }
    }

    fn covers(&self, prompt_index: usize) -> bool {
        self.prompt_limit.map_or(true, |l| prompt_index < l)
    }
}

/// Rebuild an InterventionSpec from its snapshot (records and plans store
/// snapshots so reruns and reports see exactly what ran).
pub fn spec_from_snapshot(snap: &SpecSnapshot, model: &ModelConfig) -> Result<InterventionSpec> {
    use crate::config::{parse_modality, parse_pathway, parse_protocol, parse_value_mode};
    use sinklab_core::intervene::PhaseWindow;
    let mut spec = InterventionSpec::observer();
    spec.enabled = snap.enabled;
    spec.pathway = parse_pathway(&snap.pathway)?;
    spec.eta = snap.eta;
    spec.value_mode = parse_value_mode(&snap.value_mode)?;
    spec.alpha = snap.alpha;
    spec.k = snap.k;
    spec.protocol = parse_protocol(&snap.protocol)?;
    for &l in &snap.layers {
        if l >= model.n_layers {
            return Err(HarnessError::config(format!(
                "layer {l} outside 0..{}",
                model.n_layers
            )));
        }
    }
    spec.target_layers = snap.layers.iter().cloned().collect();
    spec.phase = PhaseWindow::new(snap.phase[0], snap.phase[1])?;
    spec.modality = parse_modality(&snap.modality)?;
    spec.random_seed = snap.random_seed;
    spec.validate()?;
    Ok(spec)
}

/// Everything a family persists about itself; `report` rebuilds analyses
/// from this plus the record file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub schema_version: u32,
    pub family: String,
    pub config_hash: String,
    pub toolkit_version: String,
    pub config: ExperimentConfig,
    pub plan: Vec<PlannedCondition>,
    pub n_records: usize,
    /// Volatile; not part of the reproducibility contract.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureManifest {
    pub failures: Vec<FailureEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureEntry {
    pub prompt_id: u64,
    pub condition: String,
    pub class: String,
    pub message: String,
}

/// A prepared experiment: resolved config, built models, prompt corpus.
pub struct Prepared {
    pub family: String,
    pub config: ExperimentConfig,
    pub model_cfg: ModelConfig,
    pub plan: Vec<PlannedCondition>,
    pub prompts: Vec<Prompt>,
    pub config_hash: String,
    model: Model,
    variant_models: Vec<(StepRule, Model)>,
}

#[derive(Serialize)]
struct HashInput<'a> {
    family: &'a str,
    config: &'a ExperimentConfig,
    plan: &'a [PlannedCondition],
}

pub fn prepare(family: &str, config: ExperimentConfig, plan: Vec<PlannedCondition>) -> Result<Prepared> {
    config.validate()?;
    if plan.is_empty() {
        return Err(HarnessError::config("empty run plan"));
    }
    let mut names = std::collections::BTreeSet::new();
    for pc in &plan {
        if !names.insert(pc.name.clone()) {
            return Err(HarnessError::config(format!(
                "duplicate condition '{}' in plan",
                pc.name
            )));
        }
    }
    if plan[0].prompt_limit.is_some() || plan[0].seed_offset != 0 || plan[0].step_rule.is_some() {
        return Err(HarnessError::config(
            "the reference condition must cover every prompt at the base seed rule",
        ));
    }
    let model_cfg = config.model.to_model_config()?;
    // Validate every planned spec up front.
    for pc in &plan {
        if let ProcKind::Spec(snap) = &pc.kind {
            spec_from_snapshot(snap, &model_cfg)?;
        }
        if let Some(rule) = &pc.step_rule {
            crate::config::parse_step_rule(rule)?;
        }
    }
    let prompts = build_prompts(&config.prompts, &model_cfg)?;
    let model = build_model(&model_cfg)?;
    let mut variant_models = Vec::new();
    for pc in &plan {
        if let Some(rule_name) = &pc.step_rule {
            let rule = crate::config::parse_step_rule(rule_name)?;
            if rule != model_cfg.step_rule && !variant_models.iter().any(|(r, _)| *r == rule) {
                let mut vc = model_cfg.clone();
                vc.step_rule = rule;
                variant_models.push((rule, build_model(&vc)?));
            }
        }
    }
    let config_hash = hash_json(&HashInput {
        family,
        config: &config,
        plan: &plan,
    })?;
    Ok(Prepared {
        family: family.to_string(),
        config,
        model_cfg,
        plan,
        prompts,
        config_hash,
        model,
        variant_models,
    })
}

impl Prepared {
    fn model_for(&self, pc: &PlannedCondition) -> Result<&Model> {
        match &pc.step_rule {
            None => Ok(&self.model),
            Some(rule_name) => {
                let rule = crate::config::parse_step_rule(rule_name)?;
                if rule == self.model_cfg.step_rule {
                    return Ok(&self.model);
                }
                self.variant_models
                    .iter()
                    .find(|(r, _)| *r == rule)
                    .map(|(_, m)| m)
                    .ok_or_else(|| HarnessError::runtime("variant model missing"))
            }
        }
    }

    pub fn seed_for(&self, prompt_id: u64, pc: &PlannedCondition) -> u64 {
        self.config
            .base_seed
            .wrapping_add(prompt_id)
            .wrapping_add(pc.seed_offset)
    }
}

/// Pre-run gate: a disabled processor must be bit-identical to no processor
/// at all, on the first few prompts, before any intervention runs.
pub fn noop_gate(prepared: &Prepared) -> Result<()> {
    let n = prepared.prompts.len().min(GATE_PROMPTS);
    for prompt in &prepared.prompts[..n] {
        let seed = prepared.config.base_seed.wrapping_add(prompt.id);
        let bare = prepared
            .model
            .generate(prompt, seed, &mut IdentityProcessor)?;
        let mut noop = DynamicSinkProcessor::new(InterventionSpec::disabled(), prompt.id)?;
        let wrapped = prepared.model.generate(prompt, seed, &mut noop)?;
        if bare.image != wrapped.image || bare.pooled != wrapped.pooled {
            return Err(HarnessError::sanity(format!(
                "disabled processor diverged from bare run on prompt {}",
                prompt.id
            )));
        }
    }
    Ok(())
}

struct PromptRun {
    records: Vec<RunRecord>,
}

fn run_prompt(prepared: &Prepared, prompt_index: usize) -> Result<PromptRun> {
    let prompt = &prepared.prompts[prompt_index];
    let cfg = &prepared.config;
    let model_cfg = &prepared.model_cfg;
    let mut records = Vec::new();
    let mut reference: Option<(sinklab_core::numerics::Tensor, Vec<f64>)> = None;

    for pc in &prepared.plan {
        if !pc.covers(prompt_index) {
            continue;
        }
        let seed = prepared.seed_for(prompt.id, pc);
        let model = prepared.model_for(pc)?;
        let started = Instant::now();
        let (output, outcome) = match &pc.kind {
            ProcKind::Bare => {
                let out = model.generate(prompt, seed, &mut IdentityProcessor)?;
                (out, None)
            }
            ProcKind::Spec(snap) => {
                let spec = spec_from_snapshot(snap, model_cfg)?;
                let mut proc = DynamicSinkProcessor::new(spec, prompt.id)?;
                let out = model.generate(prompt, seed, &mut proc)?;
                (out, Some(proc.finish()))
            }
        };
        let wall = started.elapsed().as_secs_f64();

        let (probes, sinks, verification, act_frac, collision) = match &outcome {
            Some(oc) => {
                let (p, s, v) = outcome_rows(oc, model_cfg.n_img, model_cfg.n_txt)?;
                let frac = if oc.gate_log.is_empty() {
                    0.0
                } else {
                    active_fraction(&oc.gate_log)?
                };
                (p, s, v, frac, oc.collision_rate)
            }
            None => (Vec::new(), Vec::new(), Vec::new(), 0.0, None),
        };

        // Verification gate: a score-path full ablation must demonstrate
        // the mass reduction at every site it touched. A condition whose
        // phase window or modality filter kept it from ever firing has no
        // sites to verify.
        if let ProcKind::Spec(snap) = &pc.kind {
            if snap.enabled && snap.pathway == "score" && snap.eta == 0.0 {
                if verification.is_empty() && act_frac > 0.0 && !sinks.is_empty() {
                    return Err(HarnessError::verification(format!(
                        "condition '{}' prompt {} fired but recorded no verification sites",
                        pc.name, prompt.id
                    )));
                }
                for row in &verification {
                    if row.factor.as_f64() < VERIFICATION_FLOOR {
                        return Err(HarnessError::verification(format!(
                            "condition '{}' prompt {} layer {} step {} head {}: reduction factor {} below {VERIFICATION_FLOOR}",
                            pc.name, prompt.id, row.layer, row.step, row.head,
                            row.factor.as_f64()
                        )));
                    }
                }
            }
        }

        let alignment = if cfg.metric_enabled("alignment") {
            Some(alignment_proxy(&output.pooled, &output.text_features)?)
        } else {
            None
        };
        let features = if cfg.metric_enabled("frechet") {
            Some(feature_projection(&output.pooled)?)
        } else {
            None
        };
        let perceptual = match (&reference, cfg.metric_enabled("perceptual")) {
            (Some((ref_image, _)), true) => Some(perceptual_distance(&output.image, ref_image)?),
            _ => None,
        };

        records.push(RunRecord {
            schema_version: SCHEMA_VERSION,
            config_hash: prepared.config_hash.clone(),
            toolkit_version: TOOLKIT_VERSION.to_string(),
            prompt_id: prompt.id,
            prompt_text: prompt.text.clone(),
            seed,
            condition: pc.name.clone(),
            spec: pc.snapshot(),
            active_fraction: act_frac,
            collision_rate: collision,
            probes,
            sinks,
            verification,
            metrics: MetricsBlock {
                provenance: "proxy".to_string(),
                alignment,
                perceptual_vs_baseline: perceptual,
                features,
            },
            image_digest: image_digest(&output.image),
            wall_time_s: wall,
        });

        if reference.is_none() {
            reference = Some((output.image, output.pooled));
        }
    }
    Ok(PromptRun { records })
}

/// Execute a prepared plan into `out_dir`, returning all records for the
/// plan (resumed ones included) in (prompt, condition) order.
pub fn run(prepared: &Prepared, out_dir: &Path) -> Result<Vec<RunRecord>> {
    let started = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let records_path = out_dir.join(RECORDS_FILE);

    noop_gate(prepared)?;

    let condition_names: Vec<String> = prepared.plan.iter().map(|p| p.name.clone()).collect();
    let mut existing: Vec<RunRecord> = Vec::new();
    let resumable = prepared.plan.iter().all(|p| p.prompt_limit.is_none());
    if records_path.exists() {
        let found = read_records(&records_path)?;
        if found.iter().any(|r| r.config_hash != prepared.config_hash) {
            return Err(HarnessError::config(format!(
                "{} holds records from a different config (hash mismatch); refusing to mix",
                records_path.display()
            )));
        }
        if resumable {
            existing = found;
        } else {
            // Families with partial-coverage conditions always run fresh.
            std::fs::remove_file(&records_path)?;
        }
    }
    let done = complete_prompt_groups(&existing, &prepared.config_hash, &condition_names);
    let pending: Vec<usize> = (0..prepared.prompts.len())
        .filter(|i| !done.contains(&prepared.prompts[*i].id))
        .collect();

    let mut failures: Vec<FailureEntry> = Vec::new();
    let mut fresh: Vec<RunRecord> = Vec::new();
    // Chunked so completed work is persisted before the next chunk starts.
    for chunk in pending.chunks(8) {
        let results: Vec<(usize, Result<PromptRun>)> = chunk
            .par_iter()
            .map(|&i| (i, run_prompt(prepared, i)))
            .collect();
        let mut chunk_records = Vec::new();
        let mut chunk_failure: Option<HarnessError> = None;
        for (i, result) in results {
            match result {
                Ok(run) => chunk_records.extend(run.records),
                Err(e) => {
                    failures.push(FailureEntry {
                        prompt_id: prepared.prompts[i].id,
                        condition: String::new(),
                        class: match &e {
                            HarnessError::Verification(_) => "verification".into(),
                            HarnessError::Sanity(_) => "sanity".into(),
                            _ => "runtime".into(),
                        },
                        message: e.to_string(),
                    });
                    if chunk_failure.is_none() {
                        chunk_failure = Some(e);
                    }
                }
            }
        }
        append_records(&records_path, &chunk_records)?;
        fresh.extend(chunk_records);
        if let Some(e) = chunk_failure {
            // Keep completed records, write the manifest, then surface the
            // first failure.
            let manifest = FailureManifest { failures };
            std::fs::write(
                out_dir.join(FAILURES_FILE),
                serde_json::to_string_pretty(&manifest)?,
            )?;
            return Err(e);
        }
    }

    let mut all = existing;
    all.extend(fresh);
    all.sort_by(|a, b| {
        let ai = condition_index(&condition_names, &a.condition);
        let bi = condition_index(&condition_names, &b.condition);
        (a.prompt_id, ai).cmp(&(b.prompt_id, bi))
    });

    let manifest = ExperimentManifest {
        schema_version: SCHEMA_VERSION,
        family: prepared.family.clone(),
        config_hash: prepared.config_hash.clone(),
        toolkit_version: TOOLKIT_VERSION.to_string(),
        config: prepared.config.clone(),
        plan: prepared.plan.clone(),
        n_records: all.len(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    std::fs::write(
        out_dir.join(EXPERIMENT_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(all)
}

fn condition_index(names: &[String], name: &str) -> usize {
    names.iter().position(|n| n == name).unwrap_or(usize::MAX)
}

pub fn read_manifest(dir: &Path) -> Result<ExperimentManifest> {
    let path = dir.join(EXPERIMENT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        HarnessError::config(format!("cannot read {}: {e}", path.display()))
    })?;
    let m: ExperimentManifest = serde_json::from_str(&text)
        .map_err(|e| HarnessError::config(format!("bad manifest {}: {e}", path.display())))?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(HarnessError::config(format!(
            "manifest schema {} unsupported",
            m.schema_version
        )));
    }
    Ok(m)
}
