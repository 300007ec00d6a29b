//! Experiment configuration: the JSON surface, validation, and hashing.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sinklab_core::intervene::{
    InterventionSpec, ModalityFilter, Pathway, PhaseWindow, ValueMode,
};
use sinklab_core::probe::SinkProtocol;
use sinklab_core::toymodel::{ModelConfig, StepRule};
use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub n_img: usize,
    pub n_txt: usize,
    pub n_steps: usize,
    pub patch: usize,
    pub vocab: usize,
    pub init_seed: u64,
    pub cond_strength: f64,
    pub step_rule: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = ModelConfig::default();
        ModelSection {
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            d_model: c.d_model,
            n_img: c.n_img,
            n_txt: c.n_txt,
            n_steps: c.n_steps,
            patch: c.patch,
            vocab: c.vocab,
            init_seed: c.init_seed,
            cond_strength: c.cond_strength,
            step_rule: c.step_rule.name().to_string(),
        }
    }
}

pub fn parse_step_rule(name: &str) -> Result<StepRule> {
    match name {
        "residual" => Ok(StepRule::Residual),
        "residual-half" => Ok(StepRule::ResidualHalf),
        other => Err(HarnessError::config(format!("unknown step rule '{other}'"))),
    }
}

impl ModelSection {
    pub fn to_model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            n_img: self.n_img,
            n_txt: self.n_txt,
            n_steps: self.n_steps,
            patch: self.patch,
            vocab: self.vocab,
            init_seed: self.init_seed,
            cond_strength: self.cond_strength,
            step_rule: parse_step_rule(&self.step_rule)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PromptsSection {
    pub count: usize,
    pub seed: u64,
    /// Optional plain-text prompt file, one prompt per line; overrides the
    /// generator (count becomes the line count).
    pub path: Option<String>,
}

impl Default for PromptsSection {
    fn default() -> Self {
        PromptsSection {
            count: 16,
            seed: 7,
            path: None,
        }
    }
}

/// Either a fixed numeric margin or "auto" (derived from the seed-variation
/// noise floor at run time).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum MarginSetting {
    Named(String),
    Value(f64),
}

impl Default for MarginSetting {
    fn default() -> Self {
        MarginSetting::Named("auto".into())
    }
}

impl MarginSetting {
    pub fn validate(&self) -> Result<()> {
        match self {
            MarginSetting::Named(s) if s == "auto" => Ok(()),
            MarginSetting::Named(s) => Err(HarnessError::config(format!(
                "equivalence_margin must be a number or \"auto\", got \"{s}\""
            ))),
            MarginSetting::Value(v) if v.is_finite() && *v > 0.0 => Ok(()),
            MarginSetting::Value(v) => Err(HarnessError::config(format!(
                "equivalence_margin {v} must be positive"
            ))),
        }
    }

    pub fn is_auto(&self) -> bool {
        matches!(self, MarginSetting::Named(_))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct StatsSection {
    pub n_resamples: usize,
    pub ci_level: f64,
    pub equivalence_margin: MarginSetting,
}

impl Default for StatsSection {
    fn default() -> Self {
        StatsSection {
            n_resamples: 1000,
            ci_level: 0.95,
            equivalence_margin: MarginSetting::default(),
        }
    }
}

/// Layer targets: a named shorthand or an explicit list.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum LayerSetting {
    Named(String),
    List(Vec<usize>),
}

impl Default for LayerSetting {
    fn default() -> Self {
        LayerSetting::Named("middle".into())
    }
}

impl LayerSetting {
    pub fn resolve(&self, model: &ModelConfig) -> Result<BTreeSet<usize>> {
        let layers: Vec<usize> = match self {
            LayerSetting::Named(name) => match name.as_str() {
                "middle" => vec![model.middle_layer()],
                "triple" => model.layer_triple(),
                "all" => (0..model.n_layers).collect(),
                other => {
                    return Err(HarnessError::config(format!(
                        "unknown layer selector '{other}' (middle | triple | all | [indices])"
                    )))
                }
            },
            LayerSetting::List(l) => l.clone(),
        };
        for &l in &layers {
            if l >= model.n_layers {
                return Err(HarnessError::config(format!(
                    "layer {l} outside 0..{}",
                    model.n_layers
                )));
            }
        }
        Ok(layers.into_iter().collect())
    }
}

/// One named intervention condition as written in a config file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConditionSection {
    pub name: String,
    #[serde(default = "default_pathway")]
    pub pathway: String,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_value_mode")]
    pub value_mode: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_protocol")]
    pub protocol: String,
    #[serde(default)]
    pub layers: LayerSetting,
    /// Closed phase window [lo, hi]; omitted = full.
    #[serde(default)]
    pub phase: Option<[f64; 2]>,
    #[serde(default = "default_modality")]
    pub modality: String,
    #[serde(default)]
    pub random_seed: u64,
    #[serde(default = "default_enabled")]
    pub enabled: bool,
}

fn default_pathway() -> String {
    "none".into()
}
fn default_eta() -> f64 {
    0.0
}
fn default_value_mode() -> String {
    "mean".into()
}
fn default_alpha() -> f64 {
    0.5
}
fn default_k() -> usize {
    1
}
fn default_protocol() -> String {
    "per-head".into()
}
fn default_modality() -> String {
    "all".into()
}
fn default_enabled() -> bool {
    true
}

pub fn parse_pathway(s: &str) -> Result<Pathway> {
    match s {
        "none" => Ok(Pathway::None),
        "score" => Ok(Pathway::Score),
        "value" => Ok(Pathway::Value),
        other => Err(HarnessError::config(format!("unknown pathway '{other}'"))),
    }
}

pub fn parse_value_mode(s: &str) -> Result<ValueMode> {
    match s {
        "zero" => Ok(ValueMode::Zero),
        "mean" => Ok(ValueMode::Mean),
        "lerp" => Ok(ValueMode::Lerp),
        other => Err(HarnessError::config(format!("unknown value mode '{other}'"))),
    }
}

pub fn parse_protocol(s: &str) -> Result<SinkProtocol> {
    match s {
        "per-head" => Ok(SinkProtocol::PerHead),
        "union-budget" => Ok(SinkProtocol::UnionBudget),
        "random" => Ok(SinkProtocol::Random),
        "index0-proxy" => Ok(SinkProtocol::Index0Proxy),
        other => Err(HarnessError::config(format!("unknown protocol '{other}'"))),
    }
}

pub fn parse_modality(s: &str) -> Result<ModalityFilter> {
    match s {
        "all" => Ok(ModalityFilter::All),
        "text" | "text-only" => Ok(ModalityFilter::TextOnly),
        "image" | "image-only" => Ok(ModalityFilter::ImageOnly),
        other => Err(HarnessError::config(format!("unknown modality '{other}'"))),
    }
}

impl ConditionSection {
    /// An observer condition: probes everything, touches nothing.
    pub fn baseline() -> Self {
        ConditionSection {
            name: "baseline".into(),
            pathway: "none".into(),
            eta: 0.0,
            value_mode: default_value_mode(),
            alpha: default_alpha(),
            k: default_k(),
            protocol: default_protocol(),
            layers: LayerSetting::default(),
            phase: None,
            modality: default_modality(),
            random_seed: 0,
            enabled: true,
        }
    }

    pub fn to_spec(&self, model: &ModelConfig) -> Result<InterventionSpec> {
        let mut spec = InterventionSpec::observer();
        spec.enabled = self.enabled;
        spec.pathway = parse_pathway(&self.pathway)?;
        spec.eta = self.eta;
        spec.value_mode = parse_value_mode(&self.value_mode)?;
        spec.alpha = self.alpha;
        spec.k = self.k;
        spec.protocol = parse_protocol(&self.protocol)?;
        spec.target_layers = self.layers.resolve(model)?;
        spec.phase = match self.phase {
            Some([lo, hi]) => PhaseWindow::new(lo, hi)?,
            None => PhaseWindow::full(),
        };
        spec.modality = parse_modality(&self.modality)?;
        spec.random_seed = self.random_seed;
        spec.validate()?;
        Ok(spec)
    }
}

/// The whole config file: model / prompts / conditions / stats / output.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub prompts: PromptsSection,
    pub base_seed: u64,
    pub metrics: Vec<String>,
    pub stats: StatsSection,
    pub conditions: Vec<ConditionSection>,
    pub output_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelSection::default(),
            prompts: PromptsSection::default(),
            base_seed: 1000,
            metrics: vec!["alignment".into(), "perceptual".into(), "frechet".into()],
            stats: StatsSection::default(),
            conditions: vec![ConditionSection::baseline()],
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::config(format!("bad config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.to_model_config()?;
        if self.prompts.count == 0 && self.prompts.path.is_none() {
            return Err(HarnessError::config("prompts.count must be positive"));
        }
        if !(0.0..1.0).contains(&self.stats.ci_level) || self.stats.ci_level <= 0.0 {
            return Err(HarnessError::config(format!(
                "ci_level {} outside (0, 1)",
                self.stats.ci_level
            )));
        }
        if self.stats.n_resamples == 0 {
            return Err(HarnessError::config("n_resamples must be positive"));
        }
        self.stats.equivalence_margin.validate()?;
        let known = ["alignment", "perceptual", "frechet"];
        for m in &self.metrics {
            if !known.contains(&m.as_str()) {
                return Err(HarnessError::config(format!(
                    "unknown metric '{m}' (alignment | perceptual | frechet)"
                )));
            }
        }
        let mut names = BTreeSet::new();
        for c in &self.conditions {
            if !names.insert(c.name.clone()) {
                return Err(HarnessError::config(format!(
                    "duplicate condition name '{}'",
                    c.name
                )));
            }
        }
        if !self.conditions.is_empty() {
            let base = &self.conditions[0];
            if base.name != "baseline" {
                return Err(HarnessError::config(
                    "first condition must be named 'baseline'",
                ));
            }
            if base.pathway != "none" || !base.enabled {
                return Err(HarnessError::config(
                    "the baseline condition must be an enabled observer (pathway none)",
                ));
            }
            let model = self.model.to_model_config()?;
            for c in &self.conditions {
                c.to_spec(&model)?;
            }
        }
        if self.metric_enabled("frechet") && self.prompts.path.is_none() && self.prompts.count < 2 {
            return Err(HarnessError::config(
                "the distributional-shift metric needs at least 2 prompts",
            ));
        }
        Ok(())
    }

    pub fn metric_enabled(&self, name: &str) -> bool {
        self.metrics.iter().any(|m| m == name)
    }
}

/// First 16 hex chars of the SHA-256 of a canonical JSON serialization.
/// Guards record files against being mixed across configs.
pub fn hash_json<T: Serialize>(value: &T) -> Result<String> {
    let canon = serde_json::to_string(value)?;
    let mut h = Sha256::new();
    h.update(canon.as_bytes());
    let digest = h.finalize();
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok(hex[..16].to_string())
}
