//! `sinklab`: run the attention-sink experiment families from the shell.
//!
//! Every subcommand maps onto one family in the harness. Exit codes:
//! 0 ok, 2 bad config/usage, 3 sanity gate, 4 verification gate,
//! 5 pairing violation, 1 anything else.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use sinklab_harness::config::{
    ConditionSection, ExperimentConfig, LayerSetting, MarginSetting,
};
use sinklab_harness::families::{
    calibrate, intervene, ksweep, observe, report, robustness, sanity, specificity, sweep,
};
use sinklab_harness::{HarnessError, Result};

#[derive(Parser)]
#[command(
    name = "sinklab",
    version,
    about = "Locate attention sinks in a toy diffusion transformer, suppress them, and measure what happens"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Probe attention concentration and sink positions without intervening
    Observe(RunArgs),
    /// Run the configured intervention conditions against the baseline
    Intervene(InterveneArgs),
    /// Sweep score suppression strength and value replacement modes
    Sweep(SweepArgs),
    /// Sweep the sink budget k under union-budget score suppression
    Ksweep(BudgetArgs),
    /// Sink suppression vs equal-budget random suppression at each k
    Specificity(BudgetArgs),
    /// Vary target layers, phase window, and token modality at fixed budget
    Robustness(RobustnessArgs),
    /// Measure seed-variation and step-count noise floors
    Calibrate(RunArgs),
    /// Self-checks: no-op identity, observer purity, suppression firing
    Sanity(SanityArgs),
    /// Regenerate tables and plots from a finished run's record file
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (falls back to output_dir from the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the prompt count
    #[arg(long)]
    prompts: Option<usize>,
    /// Override the base seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the bootstrap resample count
    #[arg(long)]
    resamples: Option<usize>,
    /// Equivalence margin: a positive number, or "auto" for the seed-noise floor
    #[arg(long)]
    margin: Option<String>,
}

impl RunArgs {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(n) = self.prompts {
            cfg.prompts.count = n;
        }
        if let Some(s) = self.seed {
            cfg.base_seed = s;
        }
        if let Some(r) = self.resamples {
            cfg.stats.n_resamples = r;
        }
        if let Some(m) = &self.margin {
            cfg.stats.equivalence_margin = parse_margin(m)?;
        }
        let out = match (&self.out, &cfg.output_dir) {
            (Some(p), _) => p.clone(),
            (None, Some(d)) => PathBuf::from(d),
            (None, None) => {
                return Err(HarnessError::config(
                    "no output directory: pass --out or set output_dir in the config",
                ))
            }
        };
        cfg.validate()?;
        Ok((cfg, out))
    }
}

fn parse_margin(s: &str) -> Result<MarginSetting> {
    let m = if s == "auto" {
        MarginSetting::Named("auto".into())
    } else {
        let v: f64 = s.parse().map_err(|_| {
            HarnessError::config(format!("--margin must be a number or \"auto\", got \"{s}\""))
        })?;
        MarginSetting::Value(v)
    };
    m.validate()?;
    Ok(m)
}

#[derive(Args)]
struct InterveneArgs {
    #[command(flatten)]
    common: RunArgs,
    /// Build one condition from flags: pathway (score | value)
    #[arg(long)]
    pathway: Option<String>,
    /// Score-path retention factor in [0, 1]; 0 removes the sinks
    #[arg(long)]
    eta: Option<f64>,
    /// Value-path replacement (zero | mean | lerp)
    #[arg(long)]
    value_mode: Option<String>,
    /// Lerp weight toward the replacement vector
    #[arg(long)]
    alpha: Option<f64>,
    /// Sink budget per attention site
    #[arg(long)]
    k: Option<usize>,
    /// Sink selection protocol: per-head | union-budget | random | index0-proxy
    #[arg(long)]
    protocol: Option<String>,
    /// Target layers: middle | triple | all | comma-separated indices
    #[arg(long)]
    layers: Option<String>,
    /// Phase window LO,HI in normalized time, e.g. --phase 0.4,0.6
    #[arg(long, value_delimiter = ',', num_args = 2, value_names = ["LO", "HI"])]
    phase: Option<Vec<f64>>,
    /// Token targets: all | text | image
    #[arg(long)]
    modality: Option<String>,
    /// Name of the flag-built condition
    #[arg(long, default_value = "intervention")]
    name: String,
}

impl InterveneArgs {
    fn flag_condition(&self) -> Result<Option<ConditionSection>> {
        let any = self.pathway.is_some()
            || self.eta.is_some()
            || self.value_mode.is_some()
            || self.alpha.is_some()
            || self.k.is_some()
            || self.protocol.is_some()
            || self.layers.is_some()
            || self.phase.is_some()
            || self.modality.is_some();
        if !any {
            return Ok(None);
        }
        let pathway = self.pathway.clone().ok_or_else(|| {
            HarnessError::config("--pathway is required when building a condition from flags")
        })?;
        let mut cond = ConditionSection {
            name: self.name.clone(),
            pathway,
            ..ConditionSection::baseline()
        };
        if let Some(e) = self.eta {
            cond.eta = e;
        }
        if let Some(v) = &self.value_mode {
            cond.value_mode = v.clone();
        }
        if let Some(a) = self.alpha {
            cond.alpha = a;
        }
        if let Some(k) = self.k {
            cond.k = k;
        }
        if let Some(p) = &self.protocol {
            cond.protocol = p.clone();
        }
        if let Some(l) = &self.layers {
            cond.layers = parse_layers(l)?;
        }
        if let Some(ph) = &self.phase {
            cond.phase = Some([ph[0], ph[1]]);
        }
        if let Some(m) = &self.modality {
            cond.modality = m.clone();
        }
        Ok(Some(cond))
    }
}

fn parse_layers(s: &str) -> Result<LayerSetting> {
    match s {
        "middle" | "triple" | "all" => Ok(LayerSetting::Named(s.into())),
        _ => {
            let list: std::result::Result<Vec<usize>, _> =
                s.split(',').map(|t| t.trim().parse()).collect();
            let list = list.map_err(|_| {
                HarnessError::config(format!(
                    "--layers must be middle | triple | all or comma-separated indices, got \"{s}\""
                ))
            })?;
            Ok(LayerSetting::List(list))
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: RunArgs,
    /// Suppression strengths to sweep, e.g. --etas 1,0.5,0.1,0
    #[arg(long, value_delimiter = ',')]
    etas: Option<Vec<f64>>,
}

#[derive(Args)]
struct BudgetArgs {
    #[command(flatten)]
    common: RunArgs,
    /// Sink budgets to sweep, e.g. --budgets 1,5,10,20,50
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<usize>>,
}

#[derive(Args)]
struct RobustnessArgs {
    #[command(flatten)]
    common: RunArgs,
    /// Sink budget shared by every robustness condition
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Args)]
struct SanityArgs {
    #[command(flatten)]
    common: RunArgs,
    /// Number of no-op generation pairs to check (overrides --prompts)
    #[arg(long)]
    pairs: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding experiment.json and run_records.jsonl
    #[arg(long)]
    from: PathBuf,
    /// Where to write the regenerated outputs (default: in place)
    #[arg(long)]
    to: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Observe(a) => {
            let (cfg, out) = a.load()?;
            observe::run(cfg, &out)?;
            done("observe", &out)
        }
        Cmd::Intervene(a) => {
            let (mut cfg, out) = a.common.load()?;
            if let Some(cond) = a.flag_condition()? {
                if cfg.conditions.iter().any(|c| c.name == cond.name) {
                    return Err(HarnessError::config(format!(
                        "condition \"{}\" already in config; pick another --name",
                        cond.name
                    )));
                }
                cfg.conditions.push(cond);
            }
            intervene::run(cfg, &out)?;
            done("intervene", &out)
        }
        Cmd::Sweep(a) => {
            let (cfg, out) = a.common.load()?;
            sweep::run(cfg, a.etas, &out)?;
            done("sweep", &out)
        }
        Cmd::Ksweep(a) => {
            let (cfg, out) = a.common.load()?;
            ksweep::run(cfg, a.budgets, &out)?;
            done("ksweep", &out)
        }
        Cmd::Specificity(a) => {
            let (cfg, out) = a.common.load()?;
            specificity::run(cfg, a.budgets, &out)?;
            done("specificity", &out)
        }
        Cmd::Robustness(a) => {
            let (cfg, out) = a.common.load()?;
            robustness::run(cfg, a.budget, &out)?;
            done("robustness", &out)
        }
        Cmd::Calibrate(a) => {
            let (cfg, out) = a.load()?;
            calibrate::run(cfg, &out)?;
            done("calibrate", &out)
        }
        Cmd::Sanity(a) => {
            let (mut cfg, out) = a.common.load()?;
            if let Some(n) = a.pairs {
                cfg.prompts.count = n;
            }
            sanity::run(cfg, &out)?;
            done("sanity", &out)
        }
        Cmd::Report(a) => {
            report::run(&a.from, a.to.as_deref())?;
            let target = a.to.as_deref().unwrap_or(&a.from);
            done("report", target)
        }
    }
}

fn done(family: &str, out: &Path) -> Result<()> {
    println!("{family}: wrote {}", out.display());
    Ok(())
}
