//! Run-record schema and JSONL persistence.
//!
//! One JSON object per line, append-only, schema versioned. Every field
//! except `wall_time_s` is a pure function of the config, so a rerun
//! reproduces the file byte-for-byte once wall times are masked; the
//! comparison helper here does exactly that masking.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sinklab_core::intervene::{
    InterventionSpec, ProcessorOutcome, ReductionFactor,
};
use sinklab_core::numerics::Tensor;
use sinklab_core::probe::modality_attribution;
use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RECORDS_FILE: &str = "run_records.jsonl";

/// Frozen copy of the intervention spec a record ran under.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpecSnapshot {
    pub enabled: bool,
    pub pathway: String,
    pub eta: f64,
    pub value_mode: String,
    pub alpha: f64,
    pub k: usize,
    pub protocol: String,
    pub layers: Vec<usize>,
    pub phase: [f64; 2],
    pub modality: String,
    pub random_seed: u64,
}

impl SpecSnapshot {
    pub fn from_spec(spec: &InterventionSpec) -> Self {
        SpecSnapshot {
            enabled: spec.enabled,
            pathway: spec.pathway.name().to_string(),
            eta: spec.eta,
            value_mode: spec.value_mode.name().to_string(),
            alpha: spec.alpha,
            k: spec.k,
            protocol: spec.protocol.name().to_string(),
            layers: spec.target_layers.iter().cloned().collect(),
            phase: [spec.phase.lo, spec.phase.hi],
            modality: spec.modality.name().to_string(),
            random_seed: spec.random_seed,
        }
    }

    /// Snapshot for a bare generation run without any processor installed.
    pub fn bare() -> Self {
        let mut s = SpecSnapshot::from_spec(&InterventionSpec::disabled());
        s.pathway = "bare".to_string();
        s
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProbeRow {
    pub layer: usize,
    pub step: usize,
    pub t_norm: f64,
    pub max_mass: f64,
    pub image_query_mass: f64,
    pub entropy: f64,
    pub top5: f64,
    pub max_activation: f64,
    pub p95_activation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SinkRow {
    pub layer: usize,
    pub step: usize,
    /// -1 marks a head-averaged (union-budget) set.
    pub head: i32,
    pub protocol: String,
    pub indices: Vec<usize>,
    pub image_count: usize,
    pub text_count: usize,
}

/// Reduction factor: a number, or the string "inf" when the after-mass
/// underflowed to exact zero.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum FactorValue {
    Num(f64),
    Sentinel(String),
}

impl FactorValue {
    pub fn from_factor(f: ReductionFactor) -> Self {
        match f {
            ReductionFactor::Finite(v) => FactorValue::Num(v),
            ReductionFactor::Infinite => FactorValue::Sentinel("inf".to_string()),
        }
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            FactorValue::Num(v) => *v,
            FactorValue::Sentinel(_) => f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            FactorValue::Num(v) if v.is_finite() && *v >= 0.0 => Ok(()),
            FactorValue::Num(v) => Err(HarnessError::runtime(format!("bad factor {v}"))),
            FactorValue::Sentinel(s) if s == "inf" => Ok(()),
            FactorValue::Sentinel(s) => {
                Err(HarnessError::runtime(format!("bad factor sentinel '{s}'")))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VerifyRow {
    pub layer: usize,
    pub step: usize,
    pub head: usize,
    pub mass_before: f64,
    pub mass_after: f64,
    pub factor: FactorValue,
}

/// Proxy metric values for one run. All fields are "proxy" provenance:
/// none is comparable to published numbers from learned metric models.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MetricsBlock {
    pub provenance: String,
    pub alignment: Option<f64>,
    /// Distance to this prompt's reference-condition image; None on the
    /// reference itself.
    pub perceptual_vs_baseline: Option<f64>,
    /// Projected features consumed by the distributional-shift metric.
    pub features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub schema_version: u32,
    pub config_hash: String,
    pub toolkit_version: String,
    pub prompt_id: u64,
    pub prompt_text: String,
    pub seed: u64,
    pub condition: String,
    pub spec: SpecSnapshot,
    pub active_fraction: f64,
    pub collision_rate: Option<f64>,
    pub probes: Vec<ProbeRow>,
    pub sinks: Vec<SinkRow>,
    pub verification: Vec<VerifyRow>,
    pub metrics: MetricsBlock,
    pub image_digest: String,
    /// Volatile: masked out of determinism comparisons.
    pub wall_time_s: f64,
}

/// SHA-256 over the exact bit pattern of an image tensor, hex encoded.
/// Equal digests mean bit-identical pixels.
pub fn image_digest(image: &Tensor) -> String {
    let mut h = Sha256::new();
    for &d in image.shape() {
        h.update((d as u64).to_le_bytes());
    }
    for &v in image.data() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Translate a processor outcome into record rows.
pub fn outcome_rows(
    outcome: &ProcessorOutcome,
    n_img: usize,
    n_txt: usize,
) -> Result<(Vec<ProbeRow>, Vec<SinkRow>, Vec<VerifyRow>)> {
    let probes = outcome
        .probes
        .iter()
        .map(|p| ProbeRow {
            layer: p.layer,
            step: p.step,
            t_norm: p.t_norm,
            max_mass: p.max_mass,
            image_query_mass: p.max_mass_image_queries,
            entropy: p.entropy_mean,
            top5: p.top5_mean,
            max_activation: p.max_activation,
            p95_activation: p.p95_activation,
        })
        .collect();
    let mut sinks = Vec::with_capacity(outcome.sinks.len());
    for s in &outcome.sinks {
        let split = modality_attribution(s, n_img, n_txt)?;
        sinks.push(SinkRow {
            layer: s.layer,
            step: s.step,
            head: s.head,
            protocol: s.protocol.name().to_string(),
            indices: s.indices.clone(),
            image_count: split.image,
            text_count: split.text,
        });
    }
    let verification = outcome
        .verification
        .entries
        .iter()
        .map(|e| VerifyRow {
            layer: e.layer,
            step: e.step,
            head: e.head,
            mass_before: e.mass_before,
            mass_after: e.mass_after,
            factor: FactorValue::from_factor(e.factor),
        })
        .collect();
    Ok((probes, sinks, verification))
}

/// Append records to a JSONL file, one object per line, flushing at the end.
pub fn append_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Read and validate a record file: schema version, factor sentinels, and
/// (prompt, condition) uniqueness.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RunRecord = serde_json::from_str(&line).map_err(|e| {
            HarnessError::runtime(format!("bad record at line {}: {e}", lineno + 1))
        })?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::runtime(format!(
                "record schema {} unsupported (expected {})",
                rec.schema_version, SCHEMA_VERSION
            )));
        }
        for v in &rec.verification {
            v.factor.validate()?;
        }
        if !seen.insert((rec.prompt_id, rec.condition.clone())) {
            return Err(HarnessError::runtime(format!(
                "duplicate record for prompt {} condition '{}'",
                rec.prompt_id, rec.condition
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Prompt ids whose record group is complete: every expected condition
/// present under the expected config hash. Used to resume partial runs.
pub fn complete_prompt_groups(
    records: &[RunRecord],
    config_hash: &str,
    conditions: &[String],
) -> BTreeSet<u64> {
    let mut per_prompt: std::collections::BTreeMap<u64, BTreeSet<&str>> =
        std::collections::BTreeMap::new();
    for r in records {
        if r.config_hash == config_hash {
            per_prompt
                .entry(r.prompt_id)
                .or_default()
                .insert(r.condition.as_str());
        }
    }
    per_prompt
        .into_iter()
        .filter(|(_, conds)| conditions.iter().all(|c| conds.contains(c.as_str())))
        .map(|(p, _)| p)
        .collect()
}

/// The record file with wall times masked to zero: the canonical form for
/// byte-identity comparisons between reruns.
pub fn masked_record_lines(path: &Path) -> Result<Vec<String>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut value: serde_json::Value = serde_json::from_str(&line)?;
        if let Some(obj) = value.as_object_mut() {
            obj.insert("wall_time_s".to_string(), serde_json::json!(0.0));
        }
        out.push(serde_json::to_string(&value)?);
    }
    Ok(out)
}
