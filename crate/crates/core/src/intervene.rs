//! Sink interventions and the attention-processor hook.
//!
//! The denoiser exposes one hook per (layer, step): a processor receives the
//! pre-softmax logits and the value matrix for every head and may mutate
//! both; the model applies softmax afterwards. [`DynamicSinkProcessor`] is
//! the workhorse implementation: it measures incoming mass at every site,
//! picks sink targets under the configured protocol, and intervenes on the
//! score path (additive log-bias, with a -1e4 mask when the scale factor is
//! zero) or the value path (zero / mean / lerp replacement).
//!
//! Scaling a token's post-softmax probability by eta and renormalizing is
//! algebraically the same as adding ln(eta) to its pre-softmax logit; the
//! score path uses the logit form and the equivalence is tested.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::numerics::{softmax_in_place, RngStream, Tensor};
use crate::probe::{
    activation_stats, max_mass, topk_concentration, topk_sinks, union_budget_sinks, SinkProtocol,
    SinkSet, ENTROPY_CLAMP,
};

/// Additive logit bias standing in for ln(0) when eta == 0. Large enough
/// that exp underflows to exactly 0.0 against any realistic logit range.
pub const SCORE_MASK: f64 = -1.0e4;

/// Which computation path the intervention edits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pathway {
    /// Pre-softmax logit bias on target columns.
    Score,
    /// Row replacement in the value matrix.
    Value,
    /// Observe only; never touch the forward pass.
    None,
}

impl Pathway {
    pub fn name(self) -> &'static str {
        match self {
            Pathway::Score => "score",
            Pathway::Value => "value",
            Pathway::None => "none",
        }
    }
}

/// Replacement rule for the value path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValueMode {
    /// Target rows become zero vectors.
    Zero,
    /// Target rows become the mean value row, averaged over all tokens
    /// before any replacement.
    Mean,
    /// Target rows become (1-alpha) * mean + alpha * original.
    Lerp,
}

impl ValueMode {
    pub fn name(self) -> &'static str {
        match self {
            ValueMode::Zero => "zero",
            ValueMode::Mean => "mean",
            ValueMode::Lerp => "lerp",
        }
    }
}

/// Restrict intervention targets to one side of the image/text boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModalityFilter {
    All,
    TextOnly,
    ImageOnly,
}

impl ModalityFilter {
    pub fn name(self) -> &'static str {
        match self {
            ModalityFilter::All => "all",
            ModalityFilter::TextOnly => "text-only",
            ModalityFilter::ImageOnly => "image-only",
        }
    }
}

/// Closed interval of normalized time [lo, hi] within [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseWindow {
    pub lo: f64,
    pub hi: f64,
}

impl PhaseWindow {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::config(format!(
                "phase window [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1"
            )));
        }
        Ok(PhaseWindow { lo, hi })
    }

    pub fn full() -> Self {
        PhaseWindow { lo: 0.0, hi: 1.0 }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.lo <= t && t <= self.hi
    }
}

/// Complete description of one intervention condition.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionSpec {
    /// When false the processor is a strict no-op: no probes, no logs, and
    /// the forward pass is bit-identical to running without a processor.
    pub enabled: bool,
    pub pathway: Pathway,
    /// Score-path scale factor in [0, 1]; 0 means full ablation.
    pub eta: f64,
    pub value_mode: ValueMode,
    /// Lerp weight on the original row, in [0, 1].
    pub alpha: f64,
    /// Sink budget per site.
    pub k: usize,
    pub protocol: SinkProtocol,
    pub target_layers: BTreeSet<usize>,
    pub phase: PhaseWindow,
    pub modality: ModalityFilter,
    /// Seed for the random-control protocol's draw streams.
    pub random_seed: u64,
}

impl InterventionSpec {
    /// Enabled observer: probes every site, modifies nothing.
    pub fn observer() -> Self {
        InterventionSpec {
            enabled: true,
            pathway: Pathway::None,
            eta: 0.0,
            value_mode: ValueMode::Zero,
            alpha: 0.5,
            k: 1,
            protocol: SinkProtocol::PerHead,
            target_layers: BTreeSet::new(),
            phase: PhaseWindow::full(),
            modality: ModalityFilter::All,
            random_seed: 0,
        }
    }

    /// Fully disabled pass-through.
    pub fn disabled() -> Self {
        InterventionSpec {
            enabled: false,
            ..InterventionSpec::observer()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.eta.is_finite() || !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::config(format!("eta {} outside [0, 1]", self.eta)));
        }
        if !self.alpha.is_finite() || !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.k == 0 {
            return Err(Error::config("sink budget k must be at least 1"));
        }
        PhaseWindow::new(self.phase.lo, self.phase.hi)?;
        Ok(())
    }
}

/// Bias added to each target logit, or None when the scale is exactly 1
/// (skipping the add keeps the forward pass bit-identical).
fn score_bias(eta: f64) -> Option<f64> {
    if eta == 1.0 {
        None
    } else if eta == 0.0 {
        Some(SCORE_MASK)
    } else {
        Some(eta.ln())
    }
}

fn check_targets(targets: &[usize], n: usize) -> Result<()> {
    for &j in targets {
        if j >= n {
            return Err(Error::domain(format!("target {j} outside token range 0..{n}")));
        }
    }
    Ok(())
}

/// Score-path bias on a single logit row: each target logit gains ln(eta),
/// or the -1e4 mask when eta == 0.
pub fn apply_score_bias(logits: &[f64], targets: &[usize], eta: f64) -> Result<Vec<f64>> {
    if !eta.is_finite() || !(0.0..=1.0).contains(&eta) {
        return Err(Error::domain(format!("eta {eta} outside [0, 1]")));
    }
    check_targets(targets, logits.len())?;
    let mut out = logits.to_vec();
    if let Some(b) = score_bias(eta) {
        for &j in targets {
            out[j] += b;
        }
    }
    Ok(out)
}

/// Same bias applied to the target columns of a full logit matrix.
pub fn score_bias_in_place(logits: &mut Tensor, targets: &[usize], eta: f64) -> Result<()> {
    if !eta.is_finite() || !(0.0..=1.0).contains(&eta) {
        return Err(Error::domain(format!("eta {eta} outside [0, 1]")));
    }
    let n = logits.cols();
    check_targets(targets, n)?;
    if let Some(b) = score_bias(eta) {
        for r in 0..logits.rows() {
            let row = logits.row_mut(r);
            for &j in targets {
                row[j] += b;
            }
        }
    }
    Ok(())
}

/// Value-path replacement of target rows. The mean row is computed over all
/// tokens before any replacement happens.
pub fn value_replacement_in_place(
    values: &mut Tensor,
    targets: &[usize],
    mode: ValueMode,
    alpha: f64,
) -> Result<()> {
    if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
        return Err(Error::domain(format!("alpha {alpha} outside [0, 1]")));
    }
    let (n, d) = (values.rows(), values.cols());
    check_targets(targets, n)?;
    if matches!(mode, ValueMode::Lerp) && alpha == 1.0 {
        return Ok(()); // degenerates to the identity
    }
    let mean: Vec<f64> = match mode {
        ValueMode::Zero => Vec::new(),
        ValueMode::Mean | ValueMode::Lerp => {
            let mut m = vec![0.0; d];
            for r in 0..n {
                for (acc, &v) in m.iter_mut().zip(values.row(r)) {
                    *acc += v;
                }
            }
            let inv = 1.0 / n as f64;
            for v in &mut m {
                *v *= inv;
            }
            m
        }
    };
    for &j in targets {
        let row = values.row_mut(j);
        match mode {
            ValueMode::Zero => row.fill(0.0),
            ValueMode::Mean => row.copy_from_slice(&mean),
            ValueMode::Lerp => {
                for (v, &m) in row.iter_mut().zip(&mean) {
                    *v = (1.0 - alpha) * m + alpha * *v;
                }
            }
        }
    }
    Ok(())
}

/// Pure counterpart of [`value_replacement_in_place`].
pub fn apply_value_replacement(
    values: &Tensor,
    targets: &[usize],
    mode: ValueMode,
    alpha: f64,
) -> Result<Tensor> {
    let mut out = values.clone();
    value_replacement_in_place(&mut out, targets, mode, alpha)?;
    Ok(out)
}

/// Uniform draw of `budget` distinct token positions, sorted ascending.
/// Partial Fisher-Yates: consumes exactly `budget` stream draws.
pub fn random_equal_budget(
    n_tokens: usize,
    budget: usize,
    stream: &mut RngStream,
) -> Result<Vec<usize>> {
    if budget == 0 || budget > n_tokens {
        return Err(Error::domain(format!(
            "budget {budget} out of range for {n_tokens} tokens"
        )));
    }
    let mut pool: Vec<usize> = (0..n_tokens).collect();
    for i in 0..budget {
        let j = i + stream.uniform_index(n_tokens - i)?;
        pool.swap(i, j);
    }
    let mut picked: Vec<usize> = pool[..budget].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Is the intervention live at normalized time `t_norm`? Window bounds are
/// closed on both sides.
pub fn phase_gate(t_norm: f64, window: &PhaseWindow) -> Result<bool> {
    if !t_norm.is_finite() || !(0.0..=1.0).contains(&t_norm) {
        return Err(Error::domain(format!("normalized time {t_norm} outside [0, 1]")));
    }
    Ok(window.contains(t_norm))
}

/// Fraction of steps on which the gate was open.
pub fn active_fraction(gate_log: &[bool]) -> Result<f64> {
    if gate_log.is_empty() {
        return Err(Error::domain("empty gate log"));
    }
    let active = gate_log.iter().filter(|&&g| g).count();
    Ok(active as f64 / gate_log.len() as f64)
}

/// Mass-reduction factor at one verified site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReductionFactor {
    Finite(f64),
    /// Post-intervention mass underflowed to exactly zero.
    Infinite,
}

impl ReductionFactor {
    pub fn as_f64(self) -> f64 {
        match self {
            ReductionFactor::Finite(v) => v,
            ReductionFactor::Infinite => f64::INFINITY,
        }
    }

    pub fn at_least(self, threshold: f64) -> bool {
        match self {
            ReductionFactor::Finite(v) => v >= threshold,
            ReductionFactor::Infinite => true,
        }
    }
}

/// before/after -> reduction factor. Zero `after` is reported as Infinite
/// rather than a division result.
pub fn verify_reduction(mass_before: f64, mass_after: f64) -> Result<ReductionFactor> {
    if !mass_before.is_finite() || !mass_after.is_finite() || mass_before < 0.0 || mass_after < 0.0
    {
        return Err(Error::domain("masses must be finite and non-negative"));
    }
    if mass_before == 0.0 {
        return Err(Error::domain("cannot verify reduction from zero pre-intervention mass"));
    }
    if mass_after == 0.0 {
        Ok(ReductionFactor::Infinite)
    } else {
        Ok(ReductionFactor::Finite(mass_before / mass_after))
    }
}

/// One verified score-path site.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationEntry {
    pub layer: usize,
    pub step: usize,
    pub head: usize,
    pub mass_before: f64,
    pub mass_after: f64,
    pub factor: ReductionFactor,
}

/// All verified sites of one generation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerificationReport {
    pub entries: Vec<VerificationEntry>,
}

impl VerificationReport {
    pub fn min_factor(&self) -> Option<f64> {
        self.entries
            .iter()
            .map(|e| e.factor.as_f64())
            .min_by(|a, b| a.partial_cmp(b).expect("factors are never NaN"))
    }

    pub fn all_at_least(&self, threshold: f64) -> bool {
        self.entries.iter().all(|e| e.factor.at_least(threshold))
    }
}

/// Per-(layer, step) probe summary recorded during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSummary {
    pub layer: usize,
    pub step: usize,
    pub t_norm: f64,
    /// Head-averaged peak incoming mass.
    pub max_mass: f64,
    /// Same, measured over image-query rows only.
    pub max_mass_image_queries: f64,
    /// Mean attention entropy over heads and queries, nats.
    pub entropy_mean: f64,
    /// Head-averaged top-5 mass concentration.
    pub top5_mean: f64,
    /// Max token norm at the attention block output.
    pub max_activation: f64,
    /// 95th-percentile token norm at the attention block output.
    pub p95_activation: f64,
}

/// Static facts about one attention site, passed to the processor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionSite {
    pub layer: usize,
    pub step: usize,
    /// step / total_steps for the current run.
    pub t_norm: f64,
    pub n_img: usize,
    pub n_txt: usize,
}

impl AttentionSite {
    pub fn n_tokens(&self) -> usize {
        self.n_img + self.n_txt
    }
}

/// Hook invoked by the denoiser once per (layer, step).
///
/// `logits` holds one pre-softmax N x N tensor per head, `values` one
/// N x d_head tensor per head. The model applies softmax after the hook
/// returns, so edits to `logits` are edits to the attention distribution.
pub trait AttentionProcessor {
    fn process(
        &mut self,
        site: &AttentionSite,
        logits: &mut [Tensor],
        values: &mut [Tensor],
    ) -> Result<()>;

    /// Called after the attention block output (post output-projection) is
    /// available. Default: ignore.
    fn observe_block_output(&mut self, _site: &AttentionSite, _output: &Tensor) -> Result<()> {
        Ok(())
    }
}

/// Processor that never touches anything and never records anything.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityProcessor;

impl AttentionProcessor for IdentityProcessor {
    fn process(&mut self, _: &AttentionSite, _: &mut [Tensor], _: &mut [Tensor]) -> Result<()> {
        Ok(())
    }
}

/// Everything a [`DynamicSinkProcessor`] accumulated over one generation.
#[derive(Debug, Clone, Default)]
pub struct ProcessorOutcome {
    pub probes: Vec<ProbeSummary>,
    pub sinks: Vec<SinkSet>,
    pub verification: VerificationReport,
    /// One gate decision per denoising step.
    pub gate_log: Vec<bool>,
    /// Random-protocol only: fraction of control positions that collided
    /// with the union-budget sink set at the same site.
    pub collision_rate: Option<f64>,
}

/// Probing + intervening processor driven by an [`InterventionSpec`].
#[derive(Debug, Clone)]
pub struct DynamicSinkProcessor {
    spec: InterventionSpec,
    prompt_stream: RngStream,
    probes: Vec<ProbeSummary>,
    sinks: Vec<SinkSet>,
    verification: VerificationReport,
    gate_log: Vec<bool>,
    gate_current: bool,
    last_step: Option<usize>,
    collision_hits: usize,
    collision_total: usize,
}

impl DynamicSinkProcessor {
    /// `prompt_id` keys the random-control streams so every prompt draws its
    /// own control positions.
    pub fn new(spec: InterventionSpec, prompt_id: u64) -> Result<Self> {
        spec.validate()?;
        let prompt_stream = RngStream::new(spec.random_seed).child_indexed("prompt", prompt_id);
        Ok(DynamicSinkProcessor {
            spec,
            prompt_stream,
            probes: Vec::new(),
            sinks: Vec::new(),
            verification: VerificationReport::default(),
            gate_log: Vec::new(),
            gate_current: false,
            last_step: None,
            collision_hits: 0,
            collision_total: 0,
        })
    }

    pub fn spec(&self) -> &InterventionSpec {
        &self.spec
    }

    pub fn finish(self) -> ProcessorOutcome {
        let collision_rate = if self.collision_total > 0 {
            Some(self.collision_hits as f64 / self.collision_total as f64)
        } else {
            None
        };
        ProcessorOutcome {
            probes: self.probes,
            sinks: self.sinks,
            verification: self.verification,
            gate_log: self.gate_log,
            collision_rate,
        }
    }

    fn filter_modality(&self, indices: Vec<usize>, n_img: usize) -> Vec<usize> {
        match self.spec.modality {
            ModalityFilter::All => indices,
            ModalityFilter::TextOnly => indices.into_iter().filter(|&j| j >= n_img).collect(),
            ModalityFilter::ImageOnly => indices.into_iter().filter(|&j| j < n_img).collect(),
        }
    }

    fn apply_to_head(
        &mut self,
        site: &AttentionSite,
        head: usize,
        targets: &[usize],
        pre_mass: &[f64],
        logits_h: &mut Tensor,
        values_h: &mut Tensor,
    ) -> Result<()> {
        match self.spec.pathway {
            Pathway::Score => {
                let before: f64 = targets.iter().map(|&j| pre_mass[j]).sum();
                score_bias_in_place(logits_h, targets, self.spec.eta)?;
                let n = logits_h.rows();
                let mut scratch = vec![0.0; n];
                let mut after = 0.0;
                for r in 0..n {
                    scratch.copy_from_slice(logits_h.row(r));
                    softmax_in_place(&mut scratch);
                    for &j in targets {
                        after += scratch[j];
                    }
                }
                after /= n as f64;
                let factor = verify_reduction(before, after)?;
                self.verification.entries.push(VerificationEntry {
                    layer: site.layer,
                    step: site.step,
                    head,
                    mass_before: before,
                    mass_after: after,
                    factor,
                });
            }
            Pathway::Value => {
                value_replacement_in_place(values_h, targets, self.spec.value_mode, self.spec.alpha)?;
            }
            Pathway::None => {}
        }
        Ok(())
    }
}

impl AttentionProcessor for DynamicSinkProcessor {
    fn process(
        &mut self,
        site: &AttentionSite,
        logits: &mut [Tensor],
        values: &mut [Tensor],
    ) -> Result<()> {
        if !self.spec.enabled {
            return Ok(());
        }
        let n = site.n_tokens();
        let h_count = logits.len();
        if h_count == 0 || values.len() != h_count {
            return Err(Error::contract("logit and value head counts differ"));
        }
        for t in logits.iter() {
            if t.ndim() != 2 || t.rows() != n || t.cols() != n {
                return Err(Error::contract("logit tensor shape does not match site"));
            }
        }
        for t in values.iter() {
            if t.ndim() != 2 || t.rows() != n {
                return Err(Error::contract("value tensor shape does not match site"));
            }
        }

        if self.last_step != Some(site.step) {
            self.gate_current = phase_gate(site.t_norm, &self.spec.phase)?;
            self.gate_log.push(self.gate_current);
            self.last_step = Some(site.step);
        }

        // Probe pass over pre-intervention logits.
        let mut mass_per_head: Vec<Vec<f64>> = Vec::with_capacity(h_count);
        let mut imgq_per_head: Vec<Vec<f64>> = Vec::with_capacity(h_count);
        let mut entropy_acc = 0.0;
        let mut scratch = vec![0.0; n];
        for logits_h in logits.iter() {
            let mut mass = vec![0.0; n];
            let mut imgq = vec![0.0; n];
            for r in 0..n {
                scratch.copy_from_slice(logits_h.row(r));
                softmax_in_place(&mut scratch);
                for (acc, &p) in mass.iter_mut().zip(&scratch) {
                    *acc += p;
                }
                if r < site.n_img {
                    for (acc, &p) in imgq.iter_mut().zip(&scratch) {
                        *acc += p;
                    }
                }
                let mut e = 0.0;
                for &p in &scratch {
                    let c = p.max(ENTROPY_CLAMP);
                    e -= c * c.ln();
                }
                entropy_acc += e;
            }
            let inv = 1.0 / n as f64;
            for v in &mut mass {
                *v *= inv;
            }
            mass_per_head.push(mass);
            if site.n_img > 0 {
                let inv = 1.0 / site.n_img as f64;
                for v in &mut imgq {
                    *v *= inv;
                }
            }
            imgq_per_head.push(imgq);
        }
        let top5_budget = 5.min(n);
        let mut top5_sum = 0.0;
        for mass in &mass_per_head {
            top5_sum += topk_concentration(mass, top5_budget)?;
        }
        self.probes.push(ProbeSummary {
            layer: site.layer,
            step: site.step,
            t_norm: site.t_norm,
            max_mass: max_mass(&mass_per_head)?,
            max_mass_image_queries: if site.n_img > 0 {
                max_mass(&imgq_per_head)?
            } else {
                0.0
            },
            entropy_mean: entropy_acc / (h_count * n) as f64,
            top5_mean: top5_sum / h_count as f64,
            max_activation: 0.0,
            p95_activation: 0.0,
        });

        if matches!(self.spec.pathway, Pathway::None) {
            // Observation mode: log the dominant sink of each head plus one
            // union-budget set at every site, touch nothing.
            for (h, mass) in mass_per_head.iter().enumerate() {
                let top1 = topk_sinks(mass, 1)?;
                self.sinks.push(SinkSet::new(
                    site.layer,
                    site.step,
                    h as i32,
                    top1,
                    SinkProtocol::PerHead,
                )?);
            }
            if self.spec.k <= n {
                let uni = union_budget_sinks(&mass_per_head, self.spec.k)?;
                self.sinks.push(SinkSet::new(
                    site.layer,
                    site.step,
                    -1,
                    uni,
                    SinkProtocol::UnionBudget,
                )?);
            }
            return Ok(());
        }

        if !self.gate_current || !self.spec.target_layers.contains(&site.layer) {
            return Ok(());
        }
        let k = self.spec.k;
        if k > n {
            return Err(Error::domain(format!("sink budget {k} exceeds {n} tokens")));
        }

        match self.spec.protocol {
            SinkProtocol::PerHead => {
                for h in 0..h_count {
                    let raw = topk_sinks(&mass_per_head[h], k)?;
                    let targets = self.filter_modality(raw, site.n_img);
                    if targets.is_empty() {
                        continue;
                    }
                    let set = SinkSet::new(
                        site.layer,
                        site.step,
                        h as i32,
                        targets.clone(),
                        SinkProtocol::PerHead,
                    )?;
                    self.sinks.push(set);
                    let pre_mass = mass_per_head[h].clone();
                    self.apply_to_head(site, h, &targets, &pre_mass, &mut logits[h], &mut values[h])?;
                }
            }
            SinkProtocol::UnionBudget | SinkProtocol::Index0Proxy | SinkProtocol::Random => {
                let raw = match self.spec.protocol {
                    SinkProtocol::UnionBudget => union_budget_sinks(&mass_per_head, k)?,
                    SinkProtocol::Index0Proxy => (0..k).collect(),
                    SinkProtocol::Random => {
                        let mut site_stream = self
                            .prompt_stream
                            .child_indexed("layer", site.layer as u64)
                            .child_indexed("step", site.step as u64);
                        let picked = random_equal_budget(n, k, &mut site_stream)?;
                        let union = union_budget_sinks(&mass_per_head, k)?;
                        self.collision_hits +=
                            picked.iter().filter(|j| union.contains(j)).count();
                        self.collision_total += picked.len();
                        picked
                    }
                    SinkProtocol::PerHead => unreachable!(),
                };
                let targets = self.filter_modality(raw, site.n_img);
                if !targets.is_empty() {
                    let set = SinkSet::new(
                        site.layer,
                        site.step,
                        -1,
                        targets.clone(),
                        self.spec.protocol,
                    )?;
                    self.sinks.push(set);
                    for h in 0..h_count {
                        let pre_mass = mass_per_head[h].clone();
                        self.apply_to_head(
                            site,
                            h,
                            &targets,
                            &pre_mass,
                            &mut logits[h],
                            &mut values[h],
                        )?;
                    }
                }
            }
        }
        Ok(())
    }

    fn observe_block_output(&mut self, site: &AttentionSite, output: &Tensor) -> Result<()> {
        if !self.spec.enabled {
            return Ok(());
        }
        let stats = activation_stats(output)?;
        if let Some(last) = self.probes.last_mut() {
            if last.layer == site.layer && last.step == site.step {
                last.max_activation = stats.max_norm;
                last.p95_activation = stats.p95_norm;
            }
        }
        Ok(())
    }
}
