//! Joint-attention toy denoiser.
//!
//! A small pre-LN transformer runs full attention over n_img image tokens
//! followed by n_txt text tokens, predicts a per-token velocity, and walks
//! the image latent for n_steps residual updates: x <- x - (1/T) f(x, t).
//! Weights are drawn once from the init seed; the initial latent comes from
//! the generation seed. Both are counter-based streams, so identical
//! (config, prompt, seed) inputs reproduce identical outputs to the bit.
//!
//! The attention hook fires once per (layer, step) with pre-softmax logits
//! and per-head values, which is exactly the surface the sink interventions
//! need; the model applies softmax after the hook returns.

use crate::error::{Error, Result};
use crate::intervene::{AttentionProcessor, AttentionSite};
use crate::numerics::{softmax_in_place, RngStream, Tensor};

/// Number of sinusoidal time features fed to the time projection.
const TIME_FEATURES: usize = 8;
const LN_EPS: f64 = 1e-6;

/// Integration rule for the latent update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// n_steps residual updates of size 1/n_steps.
    Residual,
    /// Half as many, coarser updates: the degraded-scheduler variant used
    /// by the calibration baselines.
    ResidualHalf,
}

impl StepRule {
    pub fn name(self) -> &'static str {
        match self {
            StepRule::Residual => "residual",
            StepRule::ResidualHalf => "residual-half",
        }
    }

    pub fn effective_steps(self, n_steps: usize) -> usize {
        match self {
            StepRule::Residual => n_steps,
            StepRule::ResidualHalf => (n_steps / 2).max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    /// Image token count; must be a perfect square (the decode grid).
    pub n_img: usize,
    pub n_txt: usize,
    pub n_steps: usize,
    /// Pixels per decoded patch side; image side = sqrt(n_img) * patch.
    pub patch: usize,
    pub vocab: usize,
    pub init_seed: u64,
    /// Multiplier on text-token value rows; a crude conditioning dial.
    pub cond_strength: f64,
    pub step_rule: StepRule,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 8,
            n_heads: 4,
            d_model: 64,
            n_img: 64,
            n_txt: 16,
            n_steps: 20,
            patch: 4,
            vocab: 256,
            init_seed: 101,
            cond_strength: 1.0,
            step_rule: StepRule::Residual,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("n_img", self.n_img),
            ("n_txt", self.n_txt),
            ("n_steps", self.n_steps),
            ("patch", self.patch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.vocab < 2 {
            return Err(Error::config("vocab must hold the pad token plus at least one word"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        let g = (self.n_img as f64).sqrt().round() as usize;
        if g * g != self.n_img {
            return Err(Error::config(format!(
                "n_img {} is not a perfect square",
                self.n_img
            )));
        }
        if !self.cond_strength.is_finite() || self.cond_strength < 0.0 {
            return Err(Error::config(format!(
                "cond_strength {} must be finite and non-negative",
                self.cond_strength
            )));
        }
        Ok(())
    }

    pub fn n_tokens(&self) -> usize {
        self.n_img + self.n_txt
    }

    pub fn grid(&self) -> usize {
        (self.n_img as f64).sqrt().round() as usize
    }

    pub fn image_side(&self) -> usize {
        self.grid() * self.patch
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// The mid-stack layer, the default intervention target.
    pub fn middle_layer(&self) -> usize {
        self.n_layers / 2
    }

    /// Early / middle / late layer triple for multi-layer interventions.
    pub fn layer_triple(&self) -> Vec<usize> {
        let mut t = vec![0, self.middle_layer(), self.n_layers - 1];
        t.dedup();
        t
    }
}

/// Tokenized conditioning input. `token_ids` always has exactly the model's
/// n_txt entries; shorter inputs are padded with the reserved token 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub id: u64,
    pub text: String,
    pub token_ids: Vec<u32>,
}

impl Prompt {
    pub fn new(id: u64, text: impl Into<String>, mut token_ids: Vec<u32>, n_txt: usize) -> Result<Self> {
        if token_ids.len() > n_txt {
            return Err(Error::config(format!(
                "prompt {id} has {} tokens, model takes {n_txt}",
                token_ids.len()
            )));
        }
        token_ids.resize(n_txt, 0);
        Ok(Prompt {
            id,
            text: text.into(),
            token_ids,
        })
    }
}

#[derive(Debug, Clone)]
struct LayerWeights {
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    ln1_g: Vec<f64>,
    ln1_b: Vec<f64>,
    ln2_g: Vec<f64>,
    ln2_b: Vec<f64>,
    w_mlp1: Tensor,
    w_mlp2: Tensor,
}

#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    embed: Tensor,
    pos_txt: Tensor,
    pos_img: Tensor,
    w_time: Tensor,
    layers: Vec<LayerWeights>,
    final_ln_g: Vec<f64>,
    final_ln_b: Vec<f64>,
    w_vel: Tensor,
    w_dec: Tensor,
}

/// Everything a single generation produces.
#[derive(Debug, Clone)]
pub struct GenerationOutput {
    /// Decoded image, [side, side, 3], values in [0, 1].
    pub image: Tensor,
    /// Mean final latent row; input to the proxy metrics.
    pub pooled: Vec<f64>,
    /// Encoded prompt rows, n_txt x d_model; the text side of alignment.
    pub text_features: Tensor,
    /// Latent after every step, only when tracing was requested.
    pub per_step_latents: Option<Vec<Tensor>>,
}

/// step / total, the normalized-time coordinate phase windows live on.
pub fn normalized_time(step: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::domain("zero total steps"));
    }
    if step >= total {
        return Err(Error::domain(format!("step {step} outside 0..{total}")));
    }
    Ok(step as f64 / total as f64)
}

/// Draw all weights from the init seed.
pub fn build_model(cfg: &ModelConfig) -> Result<Model> {
    cfg.validate()?;
    let root = RngStream::new(cfg.init_seed);
    let d = cfg.d_model;
    let bound = 1.0 / (d as f64).sqrt();
    let mat = |label: &str, idx: u64, rows: usize, cols: usize| -> Result<Tensor> {
        let b = 1.0 / (rows as f64).sqrt();
        let mut s = root.child_indexed(label, idx);
        Tensor::random_uniform(vec![rows, cols], &mut s, -b, b)
    };
    let embed = {
        let mut s = root.child("embed");
        Tensor::random_uniform(vec![cfg.vocab, d], &mut s, -bound, bound)?
    };
    let pos_txt = {
        let mut s = root.child("pos_txt");
        Tensor::random_uniform(vec![cfg.n_txt, d], &mut s, -bound, bound)?
    };
    let pos_img = {
        let mut s = root.child("pos_img");
        Tensor::random_uniform(vec![cfg.n_img, d], &mut s, -bound, bound)?
    };
    let w_time = mat("time", 0, TIME_FEATURES, d)?;
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers as u64 {
        layers.push(LayerWeights {
            wq: mat("wq", l, d, d)?,
            wk: mat("wk", l, d, d)?,
            wv: mat("wv", l, d, d)?,
            wo: mat("wo", l, d, d)?,
            ln1_g: vec![1.0; d],
            ln1_b: vec![0.0; d],
            ln2_g: vec![1.0; d],
            ln2_b: vec![0.0; d],
            w_mlp1: mat("mlp1", l, d, d)?,
            w_mlp2: mat("mlp2", l, d, d)?,
        });
    }
    let w_vel = mat("vel", 0, d, d)?;
    let w_dec = mat("dec", 0, d, cfg.patch * cfg.patch * 3)?;
    Ok(Model {
        cfg: cfg.clone(),
        embed,
        pos_txt,
        pos_img,
        w_time,
        layers,
        final_ln_g: vec![1.0; d],
        final_ln_b: vec![0.0; d],
        w_vel,
        w_dec,
    })
}

/// Token embeddings plus positions for one prompt: n_txt x d_model.
pub fn encode_prompt(model: &Model, prompt: &Prompt) -> Result<Tensor> {
    let cfg = &model.cfg;
    if prompt.token_ids.len() != cfg.n_txt {
        return Err(Error::shape(format!(
            "prompt {} has {} tokens, model takes {}",
            prompt.id,
            prompt.token_ids.len(),
            cfg.n_txt
        )));
    }
    let d = cfg.d_model;
    let mut out = Tensor::zeros(vec![cfg.n_txt, d]);
    for (t, &id) in prompt.token_ids.iter().enumerate() {
        if id as usize >= cfg.vocab {
            return Err(Error::domain(format!(
                "token id {id} outside vocab 0..{}",
                cfg.vocab
            )));
        }
        let emb = model.embed.row(id as usize);
        let pos = model.pos_txt.row(t);
        for ((o, &e), &p) in out.row_mut(t).iter_mut().zip(emb).zip(pos) {
            *o = e + p;
        }
    }
    Ok(out)
}

fn layer_norm_rows(input: &Tensor, gain: &[f64], bias: &[f64]) -> Tensor {
    let (n, d) = (input.rows(), input.cols());
    let mut out = Tensor::zeros(vec![n, d]);
    for r in 0..n {
        let row = input.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (((o, &v), &g), &b) in out.row_mut(r).iter_mut().zip(row).zip(gain).zip(bias) {
            *o = (v - mean) * inv * g + b;
        }
    }
    out
}

fn slice_cols(t: &Tensor, lo: usize, hi: usize) -> Tensor {
    let n = t.rows();
    let w = hi - lo;
    let mut out = Tensor::zeros(vec![n, w]);
    for r in 0..n {
        out.row_mut(r).copy_from_slice(&t.row(r)[lo..hi]);
    }
    out
}

fn add_in_place(dst: &mut Tensor, src: &Tensor) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

fn time_features(t_norm: f64) -> [f64; TIME_FEATURES] {
    let mut f = [0.0; TIME_FEATURES];
    for j in 0..TIME_FEATURES / 2 {
        let freq = (1usize << j) as f64 * std::f64::consts::PI;
        f[2 * j] = (freq * t_norm).sin();
        f[2 * j + 1] = (freq * t_norm).cos();
    }
    f
}

impl Model {
    pub fn cfg(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Run the full denoising loop under the given processor.
    pub fn generate(
        &self,
        prompt: &Prompt,
        seed: u64,
        processor: &mut dyn AttentionProcessor,
    ) -> Result<GenerationOutput> {
        self.generate_inner(prompt, seed, processor, false)
    }

    /// Same, retaining the latent after every step.
    pub fn generate_traced(
        &self,
        prompt: &Prompt,
        seed: u64,
        processor: &mut dyn AttentionProcessor,
    ) -> Result<GenerationOutput> {
        self.generate_inner(prompt, seed, processor, true)
    }

    fn generate_inner(
        &self,
        prompt: &Prompt,
        seed: u64,
        processor: &mut dyn AttentionProcessor,
        trace: bool,
    ) -> Result<GenerationOutput> {
        let cfg = &self.cfg;
        let (n_img, n_txt, d) = (cfg.n_img, cfg.n_txt, cfg.d_model);
        let n = n_img + n_txt;
        let heads = cfg.n_heads;
        let dh = cfg.d_head();
        let total = cfg.step_rule.effective_steps(cfg.n_steps);

        let text_features = encode_prompt(self, prompt)?;
        let mut latent_stream = RngStream::new(seed).child("latent");
        let mut x = Tensor::zeros(vec![n_img, d]);
        for v in x.data_mut() {
            *v = latent_stream.standard_normal();
        }

        let mut trajectory = if trace { Some(Vec::with_capacity(total)) } else { None };
        let scale = 1.0 / (dh as f64).sqrt();

        for step in 0..total {
            let t_norm = normalized_time(step, total)?;
            // Assemble the joint token sequence for this step.
            let tf = time_features(t_norm);
            let mut time_vec = vec![0.0; d];
            for (j, &f) in tf.iter().enumerate() {
                for (tv, &w) in time_vec.iter_mut().zip(self.w_time.row(j)) {
                    *tv += f * w;
                }
            }
            let mut tokens = Tensor::zeros(vec![n, d]);
            for r in 0..n_img {
                let xr = x.row(r);
                let pr = self.pos_img.row(r);
                for (((o, &xv), &pv), &tv) in
                    tokens.row_mut(r).iter_mut().zip(xr).zip(pr).zip(&time_vec)
                {
                    *o = xv + pv + tv;
                }
            }
            for r in 0..n_txt {
                tokens.row_mut(n_img + r).copy_from_slice(text_features.row(r));
            }

            for (l, lw) in self.layers.iter().enumerate() {
                let site = AttentionSite {
                    layer: l,
                    step,
                    t_norm,
                    n_img,
                    n_txt,
                };
                let h = layer_norm_rows(&tokens, &lw.ln1_g, &lw.ln1_b);
                let q = h.matmul(&lw.wq)?;
                let k = h.matmul(&lw.wk)?;
                let mut v = h.matmul(&lw.wv)?;
                if cfg.cond_strength != 1.0 {
                    for r in n_img..n {
                        for val in v.row_mut(r) {
                            *val *= cfg.cond_strength;
                        }
                    }
                }
                let mut logits: Vec<Tensor> = Vec::with_capacity(heads);
                let mut values: Vec<Tensor> = Vec::with_capacity(heads);
                for hd in 0..heads {
                    let lo = hd * dh;
                    let hi = lo + dh;
                    let qh = slice_cols(&q, lo, hi);
                    let kht = slice_cols(&k, lo, hi).transpose()?;
                    let mut lg = qh.matmul(&kht)?;
                    for val in lg.data_mut() {
                        *val *= scale;
                    }
                    logits.push(lg);
                    values.push(slice_cols(&v, lo, hi));
                }

                processor.process(&site, &mut logits, &mut values)?;

                let mut attn = Tensor::zeros(vec![n, d]);
                for hd in 0..heads {
                    let lg = &mut logits[hd];
                    for r in 0..n {
                        softmax_in_place(lg.row_mut(r));
                    }
                    let head_out = lg.matmul(&values[hd])?;
                    let lo = hd * dh;
                    for r in 0..n {
                        attn.row_mut(r)[lo..lo + dh].copy_from_slice(head_out.row(r));
                    }
                }
                let block_out = attn.matmul(&lw.wo)?;
                processor.observe_block_output(&site, &block_out)?;
                add_in_place(&mut tokens, &block_out);

                let h2 = layer_norm_rows(&tokens, &lw.ln2_g, &lw.ln2_b);
                let mut m = h2.matmul(&lw.w_mlp1)?;
                for val in m.data_mut() {
                    if *val < 0.0 {
                        *val = 0.0;
                    }
                }
                let m = m.matmul(&lw.w_mlp2)?;
                add_in_place(&mut tokens, &m);
            }

            // Velocity from the image rows only.
            let img_state = {
                let mut t = Tensor::zeros(vec![n_img, d]);
                for r in 0..n_img {
                    t.row_mut(r).copy_from_slice(tokens.row(r));
                }
                t
            };
            let vel = layer_norm_rows(&img_state, &self.final_ln_g, &self.final_ln_b)
                .matmul(&self.w_vel)?;
            let inv_total = 1.0 / total as f64;
            for (xv, &vv) in x.data_mut().iter_mut().zip(vel.data()) {
                *xv -= vv * inv_total;
            }
            if !x.data().iter().all(|v| v.is_finite()) {
                return Err(Error::domain(format!("denoiser diverged at step {step}")));
            }
            if let Some(traj) = trajectory.as_mut() {
                traj.push(x.clone());
            }
        }

        let mut pooled = vec![0.0; d];
        for r in 0..n_img {
            for (p, &v) in pooled.iter_mut().zip(x.row(r)) {
                *p += v;
            }
        }
        let inv = 1.0 / n_img as f64;
        for p in &mut pooled {
            *p *= inv;
        }

        let image = self.decode(&x)?;
        Ok(GenerationOutput {
            image,
            pooled,
            text_features,
            per_step_latents: trajectory,
        })
    }

    /// Per-token linear decode into a patch grid, shifted to mid-gray and
    /// clamped to [0, 1].
    fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        let cfg = &self.cfg;
        let g = cfg.grid();
        let p = cfg.patch;
        let side = g * p;
        let patches = latent.matmul(&self.w_dec)?;
        let mut img = Tensor::zeros(vec![side, side, 3]);
        for token in 0..cfg.n_img {
            let gy = token / g;
            let gx = token % g;
            let vals = patches.row(token);
            for py in 0..p {
                for px in 0..p {
                    for c in 0..3 {
                        let v = vals[(py * p + px) * 3 + c];
                        let pixel = (0.5 + v).clamp(0.0, 1.0);
                        let y = gy * p + py;
                        let x = gx * p + px;
                        img.data_mut()[(y * side + x) * 3 + c] = pixel;
                    }
                }
            }
        }
        Ok(img)
    }
}
