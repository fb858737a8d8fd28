//! Experiment runner: a TOML config names a target, a ladder, a sampler and a
//! list of tasks; each task writes JSON, JSON Lines or CSV files into the
//! output directory, and a manifest records every file with its digest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    beta1_conductance_bound, counterexample_witness, fit_cold_samples, inequality_suite, projected_chain_estimate,
    ratio_conductance_bound,
};
use crate::error::{Error, Result};
use crate::finitelab::{comparison_campaign, decomposition_campaign, tv_campaign, CAMPAIGN_S_VALUES};
use crate::ladder::{build_ladder, overlap_diagnostics, step_sizes, DesignReport, Ladder, StepSizeParams};
use crate::rng::{standard_normal, stream_rng};
use crate::targets::{LocalPotential, MixtureSpec};
use crate::tempering::{run_chain_observed, ChainInit, ProposalKind, TemperingConfig};
use crate::zconst::calibrate_pseudo_weights;

pub const EXIT_OK: i32 = 0;
pub const EXIT_TASK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Sample,
    Calibrate,
    VerifyFinite,
    VerifyBounds,
    Sweep,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Sample => "sample",
            Task::Calibrate => "calibrate",
            Task::VerifyFinite => "verify-finite",
            Task::VerifyBounds => "verify-bounds",
            Task::Sweep => "sweep",
        }
    }
}

/// Rule for placing modes when they are not listed explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModeGenerator {
    /// `±(distance, 0, …, 0)`.
    SymmetricPair { dim: usize, distance: f64 },
    /// `count` points uniform on the sphere of radius `radius`.
    Sphere { count: usize, dim: usize, radius: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub local: LocalPotential,
    /// Uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<ModeGenerator>,
}

impl TargetConfig {
    pub fn build(&self) -> Result<MixtureSpec> {
        let modes = match (&self.modes, &self.generator) {
            (Some(m), None) => m.clone(),
            (None, Some(ModeGenerator::SymmetricPair { dim, distance })) => {
                return match &self.weights {
                    None => MixtureSpec::symmetric_pair(*dim, *distance, self.local.clone()),
                    Some(w) => {
                        let mut a = vec![0.0; *dim];
                        a[0] = *distance;
                        let b = a.iter().map(|v| -v).collect();
                        MixtureSpec::new(w.clone(), vec![a, b], self.local.clone())
                    }
                };
            }
            (None, Some(ModeGenerator::Sphere { count, dim, radius, seed })) => {
                let mut rng = stream_rng(*seed, 0);
                (0..*count)
                    .map(|_| {
                        let z = standard_normal(&mut rng, *dim);
                        let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                        z.iter().map(|v| v / n * radius).collect()
                    })
                    .collect()
            }
            (Some(_), Some(_)) => return Err(Error::Config("target: give either modes or generator, not both".into())),
            (None, None) => return Err(Error::Config("target: needs modes or a generator".into())),
        };
        let k = modes.len();
        let weights = self.weights.clone().unwrap_or_else(|| vec![1.0 / k as f64; k]);
        MixtureSpec::new(weights, modes, self.local.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LadderConfig {
    /// Spacing from the smoothness, convexity, dimension and mode radius.
    Auto,
    Explicit {
        betas: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        log_weights: Option<Vec<f64>>,
    },
    Geometric { ratio: f64, levels: usize },
}

impl LadderConfig {
    pub fn build(&self, spec: &MixtureSpec) -> Result<Ladder> {
        match self {
            LadderConfig::Auto => build_ladder(
                spec.local().smoothness(),
                spec.local().convexity(),
                spec.dim(),
                spec.max_mode_norm(),
            ),
            LadderConfig::Explicit { betas, log_weights: None } => Ladder::from_betas(betas.clone()),
            LadderConfig::Explicit { betas, log_weights: Some(z) } => Ladder::with_log_weights(betas.clone(), z.clone()),
            LadderConfig::Geometric { ratio, levels } => Ladder::geometric(*ratio, *levels),
        }
    }
}

fn default_alpha() -> f64 {
    0.5
}
fn default_q_adj() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}
fn default_one() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub proposal: ProposalKind,
    /// Chosen from the step-size formulas when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_q_adj")]
    pub q_adj: f64,
    #[serde(default = "default_true")]
    pub lazy: bool,
    #[serde(default)]
    pub seed: u64,
    pub steps: u64,
    #[serde(default = "default_one")]
    pub thin: u64,
    #[serde(default = "default_one")]
    pub replicas: u64,
    /// Constants for automatic step sizes.
    #[serde(default)]
    pub step_params: StepSizeParamsConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepSizeParamsConfig {
    pub eta: f64,
    pub epsilon: f64,
    pub c: f64,
}

impl Default for StepSizeParamsConfig {
    fn default() -> Self {
        let p = StepSizeParams::default();
        StepSizeParamsConfig { eta: p.eta, epsilon: p.epsilon, c: p.c }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub per_level_budget: u64,
    pub verify_steps: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { per_level_budget: 10_000, verify_steps: 100_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiniteConfig {
    pub chains: usize,
    pub comparison_instances: usize,
    pub tv_chains: usize,
    pub tv_horizon: usize,
    pub seed: u64,
}

impl Default for FiniteConfig {
    fn default() -> Self {
        FiniteConfig { chains: 1000, comparison_instances: 100, tv_chains: 100, tv_horizon: 1000, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    pub points: usize,
    pub n_mc: usize,
    /// Step size and `s` for the two-Gaussian conductance ceilings.
    pub h: f64,
    pub s: f64,
    pub seed: u64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig { points: 1000, n_mc: 10_000, h: 0.25, s: 0.0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub dims: Vec<usize>,
    pub separations: Vec<f64>,
    pub beta1: Vec<f64>,
    pub rhos: Vec<f64>,
    #[serde(default = "default_sweep_h")]
    pub h: f64,
    #[serde(default)]
    pub s: f64,
}

fn default_sweep_h() -> f64 {
    0.25
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub tasks: Vec<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder: Option<LadderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerConfig>,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub finite: FiniteConfig,
    #[serde(default)]
    pub bounds: BoundsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks that every task has the blocks it reads and that they build.
    pub fn validate(&self) -> Result<()> {
        for &task in &self.tasks {
            let need = |present: bool, block: &str| {
                if present {
                    Ok(())
                } else {
                    Err(Error::Config(format!("task `{}` needs a [{block}] block", task.name())))
                }
            };
            match task {
                Task::Sample | Task::Calibrate => {
                    need(self.target.is_some(), "target")?;
                    need(self.ladder.is_some(), "ladder")?;
                    need(self.sampler.is_some(), "sampler")?;
                }
                Task::VerifyBounds => {
                    need(self.target.is_some(), "target")?;
                    need(self.ladder.is_some(), "ladder")?;
                }
                Task::Sweep => need(self.sweep.is_some(), "sweep")?,
                Task::VerifyFinite => {}
            }
        }
        if let Some(t) = &self.target {
            let spec = t.build().map_err(|e| Error::Config(format!("target: {e}")))?;
            if let Some(l) = &self.ladder {
                l.build(&spec).map_err(|e| Error::Config(format!("ladder: {e}")))?;
            }
        }
        if let Some(s) = &self.sampler {
            if s.thin == 0 || s.replicas == 0 {
                return Err(Error::Config("sampler: thin and replicas must be at least 1".into()));
            }
            if let Some(h) = s.h {
                if !(h > 0.0 && h.is_finite()) {
                    return Err(Error::Config(format!("sampler.h: must be positive, got {h}")));
                }
            }
            crate::ladder::check_swap_params(s.alpha, s.q_adj).map_err(|e| Error::Config(format!("sampler: {e}")))?;
        }
        Ok(())
    }

    /// Replaces every seed in the config.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(s) = &mut self.sampler {
            s.seed = seed;
        }
        self.finite.seed = seed;
        self.bounds.seed = seed;
    }
}

#[derive(Parser, Debug)]
#[command(name = "simtemp", about = "Simulated tempering experiments and verification campaigns")]
pub struct Args {
    /// TOML experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the sampler's replica count.
    #[arg(long)]
    pub replicas: Option<u64>,
    /// Only log warnings and errors.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
    pub task: String,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
    pub failed_reports: Vec<String>,
    pub status: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
struct TaskReport<T: Serialize> {
    task: &'static str,
    passed: bool,
    report: T,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Run {
    out: PathBuf,
    manifest: Manifest,
    spec: Option<MixtureSpec>,
    ladder: Option<Ladder>,
}

impl Run {
    fn record(&mut self, name: &str, task: Task, started: Instant) -> Result<()> {
        let bytes = fs::read(self.out.join(name))?;
        self.manifest.files.push(ManifestEntry {
            file: name.to_string(),
            sha256: sha256_hex(&bytes),
            task: task.name().to_string(),
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, task: Task, started: Instant, value: &T) -> Result<()> {
        let mut f = BufWriter::new(File::create(self.out.join(name))?);
        serde_json::to_writer_pretty(&mut f, value)?;
        f.write_all(b"\n")?;
        f.flush()?;
        drop(f);
        self.record(name, task, started)
    }

    fn fail(&mut self, name: &str) {
        self.manifest.failed_reports.push(name.to_string());
    }

    fn spec(&self) -> &MixtureSpec {
        self.spec.as_ref().expect("validated config has a target")
    }

    fn ladder(&self) -> &Ladder {
        self.ladder.as_ref().expect("validated config has a ladder")
    }
}

fn tempering_config(cfg: &SamplerConfig, spec: &MixtureSpec, ladder: &Ladder) -> Result<TemperingConfig> {
    let h = match cfg.h {
        Some(h) => h,
        None => {
            let params = StepSizeParams {
                alpha: cfg.alpha,
                q_adj: cfg.q_adj,
                eta: cfg.step_params.eta,
                epsilon: cfg.step_params.epsilon,
                c: cfg.step_params.c,
            };
            let s = step_sizes(spec, ladder, &params)?;
            let h = match cfg.proposal {
                ProposalKind::Rwm => s.rwm_h,
                ProposalKind::Mala => s.mala_h,
            };
            log::info!(
                "auto step size h = {h:.6e} ({:?}; L = {}, m = {}, d = {}, D = {}, R = {:.4}, c = {}, T = {})",
                cfg.proposal,
                spec.local().smoothness(),
                spec.local().convexity(),
                spec.dim(),
                spec.max_mode_norm(),
                s.r,
                params.c,
                ladder.num_levels()
            );
            h
        }
    };
    let tc = TemperingConfig { proposal: cfg.proposal, h, alpha: cfg.alpha, q_adj: cfg.q_adj, lazy: cfg.lazy, seed: cfg.seed };
    tc.validate()?;
    Ok(tc)
}

fn run_sample(run: &mut Run, cfg: &ExperimentConfig, started: Instant) -> Result<()> {
    let sc = cfg.sampler.as_ref().expect("validated");
    let spec = run.spec().clone();
    let ladder = run.ladder().clone();
    let tc = tempering_config(sc, &spec, &ladder)?;
    let names: Vec<String> = (0..sc.replicas).map(|r| format!("trace_replica_{r}.jsonl")).collect();
    let cold = ladder.num_levels() - 1;
    let results = (0..sc.replicas)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let path = run.out.join(&names[r as usize]);
            let mut w = BufWriter::new(File::create(path)?);
            let mut io_err = None;
            let mut cold_samples = Vec::new();
            let summary = run_chain_observed(&ChainInit::Default, &spec, &ladder, &tc, sc.steps, r, |rec| {
                if rec.level == cold && rec.step > 0 {
                    cold_samples.push(rec.x.clone());
                }
                if rec.step % sc.thin == 0 && io_err.is_none() {
                    let res = serde_json::to_writer(&mut w, rec).map_err(Error::from).and_then(|_| Ok(w.write_all(b"\n")?));
                    if let Err(e) = res {
                        io_err = Some(e);
                    }
                }
            })?;
            if let Some(e) = io_err {
                return Err(e);
            }
            w.flush()?;
            let fit = if spec.local().is_quadratic() && !cold_samples.is_empty() {
                Some(fit_cold_samples(&cold_samples, &spec)?)
            } else {
                None
            };
            Ok((summary, fit))
        })
        .collect::<Result<Vec<_>>>()?;
    for name in &names {
        run.record(name, Task::Sample, started)?;
    }
    #[derive(Serialize)]
    struct SampleReport<'a> {
        h: f64,
        ladder: &'a Ladder,
        replicas: Vec<serde_json::Value>,
    }
    let replicas = results
        .iter()
        .map(|(s, f)| serde_json::json!({ "summary": s, "cold_fit": f }))
        .collect();
    run.write_json("sample_summary.json", Task::Sample, started, &SampleReport { h: tc.h, ladder: &ladder, replicas })
}

fn run_calibrate(run: &mut Run, cfg: &ExperimentConfig, started: Instant) -> Result<()> {
    let sc = cfg.sampler.as_ref().expect("validated");
    let spec = run.spec().clone();
    let ladder = run.ladder().clone();
    let tc = tempering_config(sc, &spec, &ladder)?;
    let report = calibrate_pseudo_weights(
        &spec,
        &ladder,
        &tc,
        cfg.calibration.per_level_budget,
        cfg.calibration.verify_steps,
    )?;
    let passed = report.passed;
    run.ladder = Some(report.calibrated_ladder(&ladder)?);
    run.write_json("calibration_report.json", Task::Calibrate, started, &TaskReport { task: "calibrate", passed, report })?;
    if !passed {
        run.fail("calibration_report.json");
    }
    Ok(())
}

fn run_verify_finite(run: &mut Run, cfg: &ExperimentConfig, started: Instant) -> Result<()> {
    let f = cfg.finite;
    let decomposition = decomposition_campaign(f.chains, f.seed, &CAMPAIGN_S_VALUES)?;
    let comparison = comparison_campaign(f.comparison_instances, f.seed ^ 1, &CAMPAIGN_S_VALUES)?;
    let tv = tv_campaign(f.tv_chains, f.seed ^ 2, f.tv_horizon)?;
    let passed = decomposition.passed && comparison.passed && tv.passed;
    let mut w = csv::Writer::from_path(run.out.join("finite_checks.csv"))?;
    w.write_record(["campaign", "check", "checked", "failures", "warnings", "worst_margin"])?;
    for (campaign, rep) in [("decomposition", &decomposition), ("comparison", &comparison)] {
        for t in &rep.checks {
            w.write_record([
                campaign.to_string(),
                t.name.clone(),
                t.checked.to_string(),
                t.failures.to_string(),
                t.warnings.to_string(),
                format!("{:e}", t.worst_margin),
            ])?;
        }
    }
    w.flush()?;
    drop(w);
    run.record("finite_checks.csv", Task::VerifyFinite, started)?;
    let report = serde_json::json!({ "decomposition": decomposition, "comparison": comparison, "tv": tv });
    run.write_json("finite_report.json", Task::VerifyFinite, started, &TaskReport { task: "verify-finite", passed, report })?;
    if !passed {
        run.fail("finite_report.json");
    }
    Ok(())
}

fn run_verify_bounds(run: &mut Run, cfg: &ExperimentConfig, started: Instant) -> Result<()> {
    let b = cfg.bounds;
    let spec = run.spec().clone();
    let ladder = run.ladder().clone();
    let mut rng = stream_rng(b.seed, 0);
    let suite = inequality_suite(&spec, &ladder, b.points, &mut rng)?;
    let mut passed = suite.passed();
    let counterexample = match counterexample_witness(&spec, &ladder, b.h, b.s, b.n_mc, b.seed) {
        Ok(r) => {
            passed &= r.passed();
            Some(r)
        }
        Err(Error::InvalidArgument(why)) => {
            log::info!("skipping counterexample bounds: {why}");
            None
        }
        Err(e) => return Err(e),
    };
    let projected = if spec.local().is_quadratic() {
        let tc = match &cfg.sampler {
            Some(sc) => tempering_config(sc, &spec, &ladder)?,
            None => TemperingConfig { seed: b.seed, ..TemperingConfig::new(ProposalKind::Rwm, 1.0) },
        };
        let p = projected_chain_estimate(&spec, &ladder, &tc, b.n_mc)?;
        passed &= p.passed;
        Some(p)
    } else {
        None
    };
    let report = serde_json::json!({
        "inequalities": suite,
        "counterexample": counterexample,
        "projected_chain": projected,
        "overlap": overlap_diagnostics(&spec, &ladder),
    });
    run.write_json("bounds_report.json", Task::VerifyBounds, started, &TaskReport { task: "verify-bounds", passed, report })?;
    if !passed {
        run.fail("bounds_report.json");
    }
    Ok(())
}

/// Smallest geometric ladder with ratio `1 + ρ` whose hottest level is at most `β₁`.
fn sweep_ladder(beta1: f64, rho: f64) -> Result<Ladder> {
    if !(beta1 > 0.0 && beta1 <= 1.0 && rho > 0.0) {
        return Err(Error::Config(format!("sweep: need β₁ in (0, 1] and ρ > 0, got {beta1}, {rho}")));
    }
    let levels = ((1.0 / beta1).ln() / (1.0 + rho).ln()).ceil().max(0.0) as usize + 1;
    Ladder::geometric(1.0 + rho, levels)
}

fn run_sweep(run: &mut Run, cfg: &ExperimentConfig, started: Instant) -> Result<()> {
    let sw = cfg.sweep.as_ref().expect("validated");
    let mut w = csv::Writer::from_path(run.out.join("sweep.csv"))?;
    w.write_record(["d", "D", "beta1", "rho", "statistic", "value"])?;
    let mut designs = Vec::new();
    for &d in &sw.dims {
        for &big_d in &sw.separations {
            let spec = MixtureSpec::symmetric_pair(d, big_d, LocalPotential::Isotropic)?;
            for &beta1 in &sw.beta1 {
                for &rho in &sw.rhos {
                    let ladder = sweep_ladder(beta1, rho)?;
                    let overlap = overlap_diagnostics(&spec, &ladder);
                    let t = ladder.num_levels();
                    let ratio_bound = if t >= 2 && sw.s < 1.0 / (4.0 * t as f64) {
                        ratio_conductance_bound(&ladder, d)?
                    } else {
                        f64::NAN
                    };
                    let stats = [
                        ("levels", t as f64),
                        ("beta1_actual", ladder.beta(0)),
                        ("beta1_conductance_bound", beta1_conductance_bound(ladder.beta(0), big_d, sw.h, d, sw.s)),
                        ("ratio_conductance_bound", ratio_bound),
                        ("hellinger_floor", overlap.hellinger_floor),
                        ("kl_ceiling", overlap.kl_ceiling),
                        ("overlap_margin", overlap.overlap_margin),
                    ];
                    for (name, value) in stats {
                        w.write_record([
                            d.to_string(),
                            big_d.to_string(),
                            beta1.to_string(),
                            rho.to_string(),
                            name.to_string(),
                            value.to_string(),
                        ])?;
                    }
                    designs.push(((d, big_d, beta1, rho), DesignReport::new(&spec, &ladder, &StepSizeParams::default())?));
                }
            }
        }
    }
    w.flush()?;
    drop(w);
    run.record("sweep.csv", Task::Sweep, started)?;
    let mut w = csv::Writer::from_path(run.out.join("sweep_design.csv"))?;
    w.write_record([
        "d", "D", "beta1_target", "rho", "T", "beta1", "ratio", "hellinger_floor", "kl_ceiling", "overlap_margin",
        "rwm_h", "mala_h", "tau", "R",
    ])?;
    for ((d, big_d, beta1, rho), r) in &designs {
        let row = [
            d.to_string(),
            big_d.to_string(),
            beta1.to_string(),
            rho.to_string(),
            r.t.to_string(),
            r.beta1.to_string(),
            r.ratio.to_string(),
            r.hellinger_floor.to_string(),
            r.kl_ceiling.to_string(),
            r.overlap_margin.to_string(),
            r.rwm_h.to_string(),
            r.mala_h.to_string(),
            r.tau.to_string(),
            r.r.to_string(),
        ];
        w.write_record(&row)?;
    }
    w.flush()?;
    drop(w);
    run.record("sweep_design.csv", Task::Sweep, started)
}

/// Runs every task in order and writes `manifest.json`. Returns the exit
/// status: 0 when every verification report passed, 1 otherwise.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<i32> {
    fs::create_dir_all(out)?;
    let spec = cfg.target.as_ref().map(TargetConfig::build).transpose()?;
    let ladder = match (&cfg.ladder, &spec) {
        (Some(l), Some(s)) => Some(l.build(s)?),
        _ => None,
    };
    let mut run = Run { out: out.to_path_buf(), manifest: Manifest::default(), spec, ladder };
    for &task in &cfg.tasks {
        let started = Instant::now();
        log::info!("task {}", task.name());
        match task {
            Task::Sample => run_sample(&mut run, cfg, started)?,
            Task::Calibrate => run_calibrate(&mut run, cfg, started)?,
            Task::VerifyFinite => run_verify_finite(&mut run, cfg, started)?,
            Task::VerifyBounds => run_verify_bounds(&mut run, cfg, started)?,
            Task::Sweep => run_sweep(&mut run, cfg, started)?,
        }
        log::info!("task {} finished in {:.2}s", task.name(), started.elapsed().as_secs_f64());
    }
    run.manifest.status = if run.manifest.failed_reports.is_empty() { EXIT_OK } else { EXIT_TASK_FAILED };
    let mut f = BufWriter::new(File::create(out.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut f, &run.manifest)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(run.manifest.status)
}

/// Reads and validates a config file; errors carry line and field context.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Command-line entry point; returns the process exit status.
pub fn main_with_args(args: Args) -> i32 {
    let level = if args.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let mut cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(seed) = args.seed {
        cfg.override_seed(seed);
    }
    if let (Some(r), Some(s)) = (args.replicas, cfg.sampler.as_mut()) {
        if r == 0 {
            eprintln!("config error: --replicas must be at least 1");
            return EXIT_CONFIG;
        }
        s.replicas = r;
    }
    match run_experiment(&cfg, &args.out) {
        Ok(EXIT_OK) => EXIT_OK,
        Ok(status) => {
            let manifest = fs::read_to_string(args.out.join("manifest.json")).ok();
            let failed: Vec<String> = manifest
                .and_then(|m| serde_json::from_str::<Manifest>(&m).ok())
                .map(|m| m.failed_reports)
                .unwrap_or_default();
            eprintln!("failed reports: {}", failed.join(", "));
            status
        }
        Err(Error::Config(msg)) => {
            eprintln!("config error: {msg}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("task error: {e}");
            EXIT_TASK_FAILED
        }
    }
}
