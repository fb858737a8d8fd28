//! Bootstrapped estimation of the level pseudo-log-weights `ζ`.
//!
//! Stage `k` runs the tempering chain on the hottest `k` levels, takes the
//! samples at the coldest of them, and estimates
//! `Z_{k+1}/Z_k = E_{π_k}[exp(-(β_{k+1} - β_k)U)]`; then
//! `ζ_{k+1} = ζ_k - ln(Z_{k+1}/Z_k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ladder::Ladder;
use crate::logspace::log_sum_exp;
use crate::targets::{mixture_potential, MixtureSpec};
use crate::tempering::{run_chain_observed, ChainInit, TemperingConfig, TemperingState};

pub const MIN_RATIO_SAMPLES: usize = 1000;
pub const MIN_LEVEL_BUDGET: u64 = 10_000;
const JACKKNIFE_BLOCKS: usize = 50;
const BURN_IN_FRACTION: f64 = 0.1;

/// Estimate of `Z_{i+1}/Z_i` with blocked-jackknife standard errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub log_ratio: f64,
    pub log_se: f64,
    pub ratio: f64,
    pub se: f64,
    pub samples: usize,
}

/// Mean of `exp(-(β_next - β)U(x))` over `samples`, in log-space.
///
/// The standard error is a delete-one-block jackknife over contiguous
/// blocks, so it stays honest for autocorrelated chain output.
pub fn estimate_level_ratio(
    samples: &[Vec<f64>],
    spec: &MixtureSpec,
    beta: f64,
    beta_next: f64,
) -> Result<RatioEstimate> {
    if samples.len() < MIN_RATIO_SAMPLES {
        return Err(Error::InsufficientSamples { got: samples.len(), need: MIN_RATIO_SAMPLES });
    }
    if !(beta > 0.0 && beta_next >= beta) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < beta <= beta_next, got {beta} and {beta_next}"
        )));
    }
    let n = samples.len();
    if beta_next == beta {
        return Ok(RatioEstimate { log_ratio: 0.0, log_se: 0.0, ratio: 1.0, se: 0.0, samples: n });
    }
    let db = beta_next - beta;
    let a = samples
        .iter()
        .map(|x| mixture_potential(spec, x).map(|u| -db * u))
        .collect::<Result<Vec<f64>>>()?;
    let log_ratio = log_sum_exp(&a) - (n as f64).ln();
    let log_se = blocked_jackknife_log_mean_se(&a, JACKKNIFE_BLOCKS);
    let ratio = log_ratio.exp();
    Ok(RatioEstimate { log_ratio, log_se, ratio, se: ratio * log_se, samples: n })
}

/// Jackknife standard error of `log mean exp(a)` over `blocks` contiguous
/// blocks.
pub(crate) fn blocked_jackknife_log_mean_se(a: &[f64], blocks: usize) -> f64 {
    let n = a.len();
    let b = blocks.min(n).max(2);
    let bounds: Vec<usize> = (0..=b).map(|k| k * n / b).collect();
    let block_lse: Vec<f64> = bounds.windows(2).map(|w| log_sum_exp(&a[w[0]..w[1]])).collect();
    let total = log_sum_exp(&block_lse);
    let leave_out: Vec<f64> = bounds
        .windows(2)
        .zip(&block_lse)
        .map(|(w, &lb)| {
            let rest = n - (w[1] - w[0]);
            total + (-(lb - total).exp()).ln_1p() - (rest as f64).ln()
        })
        .collect();
    let mean = leave_out.iter().sum::<f64>() / b as f64;
    let ss: f64 = leave_out.iter().map(|v| (v - mean) * (v - mean)).sum();
    ((b as f64 - 1.0) / b as f64 * ss).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub log_weights: Vec<f64>,
    pub occupancy: Vec<f64>,
    pub ratio_estimates: Vec<RatioEstimate>,
    /// Steps used by each stage, then by the verification run.
    pub budget_used: Vec<u64>,
    pub passed: bool,
    /// Levels whose verification occupancy falls outside `[1/(3T), 3/T]`.
    pub offending_levels: Vec<usize>,
    pub status: String,
}

impl CalibrationReport {
    pub fn calibrated_ladder(&self, ladder: &Ladder) -> Result<Ladder> {
        let mut out = ladder.clone();
        out.set_log_weights(self.log_weights.clone())?;
        Ok(out)
    }
}

/// Levels with occupancy outside `[1/(factor·T), factor/T]`.
pub fn occupancy_outliers(occupancy: &[f64], factor: f64) -> Vec<usize> {
    let t = occupancy.len() as f64;
    occupancy
        .iter()
        .enumerate()
        .filter(|(_, &o)| o < 1.0 / (factor * t) || o > factor / t)
        .map(|(i, _)| i)
        .collect()
}

/// Calibrates `ζ` stage by stage, then checks occupancy on a fresh run of
/// `verify_steps` steps over the full ladder.
pub fn calibrate_pseudo_weights(
    spec: &MixtureSpec,
    ladder: &Ladder,
    config: &TemperingConfig,
    per_level_budget: u64,
    verify_steps: u64,
) -> Result<CalibrationReport> {
    config.validate()?;
    if per_level_budget < MIN_LEVEL_BUDGET {
        return Err(Error::InvalidArgument(format!(
            "per-level budget must be at least {MIN_LEVEL_BUDGET}, got {per_level_budget}"
        )));
    }
    let t = ladder.num_levels();
    if t == 1 {
        return Ok(CalibrationReport {
            log_weights: vec![0.0],
            occupancy: vec![1.0],
            ratio_estimates: vec![],
            budget_used: vec![],
            passed: true,
            offending_levels: vec![],
            status: "ok".into(),
        });
    }
    let mut zeta = vec![0.0; t];
    let mut estimates = Vec::with_capacity(t - 1);
    let mut budget = Vec::with_capacity(t);
    let mut warm: Option<TemperingState> = None;
    for k in 1..t {
        let mut prefix = ladder.prefix(k);
        prefix.set_log_weights(zeta[..k].to_vec())?;
        let steps = per_level_budget * k as u64;
        let burn = (BURN_IN_FRACTION * steps as f64).ceil() as u64;
        let init = match warm.take() {
            Some(s) => ChainInit::Tempering(s),
            None => ChainInit::Default,
        };
        let cold = k - 1;
        let mut samples = Vec::new();
        let mut last = None;
        run_chain_observed(&init, spec, &prefix, config, steps, k as u64, |rec| {
            if rec.step > burn && rec.level == cold {
                samples.push(rec.x.clone());
            }
            if rec.step == steps {
                last = Some(TemperingState { level: rec.level, x: rec.x.clone() });
            }
        })?;
        let est = estimate_level_ratio(&samples, spec, ladder.beta(cold), ladder.beta(k))?;
        log::debug!(
            "stage {k}: {} samples, log ratio {:.5} ± {:.5}",
            est.samples,
            est.log_ratio,
            est.log_se
        );
        zeta[k] = zeta[cold] - est.log_ratio;
        estimates.push(est);
        budget.push(steps);
        warm = last;
    }
    let mut calibrated = ladder.clone();
    calibrated.set_log_weights(zeta.clone())?;
    let init = match warm {
        Some(s) => ChainInit::Tempering(s),
        None => ChainInit::Default,
    };
    let summary = run_chain_observed(&init, spec, &calibrated, config, verify_steps, t as u64, |_| {})?;
    budget.push(verify_steps);
    let offending = occupancy_outliers(&summary.occupancy, 3.0);
    let passed = offending.is_empty();
    Ok(CalibrationReport {
        log_weights: zeta,
        occupancy: summary.occupancy,
        ratio_estimates: estimates,
        budget_used: budget,
        passed,
        offending_levels: offending,
        status: if passed { "ok".into() } else { "calibration-failed".into() },
    })
}
