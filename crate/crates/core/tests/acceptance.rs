//! Acceptance suite: one pass/fail line per criterion, written straight to
//! stderr so the lines survive output capture. Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 4 9`.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::Deserialize;

use simtemp::diagnostics::{
    beta1_conductance_bound, counterexample_witness, fit_cold_samples, inequality_suite, projected_chain_estimate,
    ratio_conductance_bound,
};
use simtemp::finitelab::{comparison_campaign, decomposition_campaign, tv_campaign, CAMPAIGN_S_VALUES};
use simtemp::ladder::{
    build_ladder, exact_overlap, f_overlap, gaussian_closed_forms, overlap_diagnostics, quadratic_hellinger,
    step_sizes, Ladder, StepSizeParams,
};
use simtemp::quad::integrate;
use simtemp::rng::stream_rng;
use simtemp::targets::{LocalPotential, MixtureSpec};
use simtemp::tempering::{run_chain_observed, ChainInit, MoveType, ProposalKind, TemperingConfig};
use simtemp::zconst::calibrate_pseudo_weights;
use simtemp::Result;

const BASE_SEED: u64 = 20_240_601;

/// Each criterion draws from its own fixed seed.
const fn seed(criterion: u64) -> u64 {
    BASE_SEED + criterion
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn within_budget(started: Instant, limit_s: u64) -> (bool, String) {
    let t = started.elapsed();
    (t <= Duration::from_secs(limit_s), format!("{:.1}s of {limit_s}s", t.as_secs_f64()))
}

fn criterion_1() -> Result<Outcome> {
    let started = Instant::now();
    let r = decomposition_campaign(1000, seed(1), &CAMPAIGN_S_VALUES)?;
    let (fast, time) = within_budget(started, 300);
    let per_check: Vec<String> = r.checks.iter().map(|c| format!("{}={}/{}", c.name, c.failures, c.checked)).collect();
    outcome(
        r.failures == 0 && fast,
        format!(
            "finite decomposition: {} chains, {} violations, {} warnings [{}], {time}",
            r.chains,
            r.failures,
            r.warnings,
            per_check.join(" ")
        ),
    )
}

fn criterion_2() -> Result<Outcome> {
    let started = Instant::now();
    let r = comparison_campaign(100, seed(2), &CAMPAIGN_S_VALUES)?;
    let (fast, time) = within_budget(started, 60);
    outcome(
        r.failures == 0 && fast,
        format!("comparison: {} instances, {} violations, {time}", r.chains, r.failures),
    )
}

fn criterion_3() -> Result<Outcome> {
    let started = Instant::now();
    let r = tv_campaign(100, seed(3), 1000)?;
    let (fast, time) = within_budget(started, 120);
    outcome(
        r.passed && fast,
        format!(
            "TV rate: {} chains to t={}, {} violations, {} sandwich failures, worst excess {:.3e}, {time}",
            r.chains, r.horizon, r.violations, r.sandwich_failures, r.worst_excess
        ),
    )
}

/// Hellinger affinity of two one-dimensional Gaussians by adaptive quadrature.
fn hellinger_1d(beta: f64, beta_prime: f64, a: f64, b: f64) -> f64 {
    let dens = |x: f64, mu: f64, p: f64| (p / (2.0 * std::f64::consts::PI)).sqrt() * (-0.5 * p * (x - mu) * (x - mu)).exp();
    let spread = 12.0 / beta.min(beta_prime).sqrt();
    let (lo, hi) = (a.min(b) - spread, a.max(b) + spread);
    integrate(|x| (dens(x, a, beta) * dens(x, b, beta_prime)).sqrt(), lo, hi, 1e-13, 1e-14).unwrap().value
}

fn criterion_4() -> Result<Outcome> {
    let started = Instant::now();
    let mut worst_h = 0.0f64;
    let mut worst_kl = 0.0f64;
    let mut cases = 0;
    for &beta in &[0.05, 0.3, 1.0, 2.0, 5.0] {
        for &rho in &[0.05, 0.2, 0.5, 1.0, 2.0] {
            for &sep in &[0.0, 1.5] {
                let d = 1 + cases % 5;
                let bp = beta * (1.0 + rho);
                let mu = vec![0.0; d];
                let mut nu = vec![0.0; d];
                nu[0] = sep;
                let cf = gaussian_closed_forms(beta, bp, &mu, &nu, d)?;
                let quad_h = quadratic_hellinger(&LocalPotential::Isotropic, beta, bp, &mu, &nu)?;
                let numeric = hellinger_1d(beta, bp, 0.0, sep) * hellinger_1d(beta, bp, 0.0, 0.0).powi(d as i32 - 1);
                worst_h = worst_h.max((cf.hellinger - numeric).abs()).max((quad_h - numeric).abs());
                let r = bp / beta;
                let kl = 0.5 * d as f64 * (r - 1.0 - r.ln()) + bp * sep * sep / 2.0;
                worst_kl = worst_kl.max((cf.kl - kl).abs());
                cases += 1;
            }
        }
    }
    let mut ladders = 0;
    let mut bracket_failures = Vec::new();
    for d in 1..=10usize {
        for &big_d in &[1.0, 2.0, 4.0, 8.0] {
            for &kappa in &[1.0, 2.0, 4.0] {
                let ladder = build_ladder(kappa, 1.0, d, big_d)?;
                // Stiffest axis along the mode separation; the rest at m = 1.
                let mut curv = vec![1.0; d];
                curv[0] = kappa;
                let spec = MixtureSpec::symmetric_pair(d, big_d, LocalPotential::Diagonal { curvatures: curv })?;
                let (delta, h) = exact_overlap(&spec, &ladder)?;
                let diag = overlap_diagnostics(&spec, &ladder);
                let floor_ok = diag.hellinger_floor <= h * (1.0 + 1e-12);
                let ceiling_ok = diag.kl_ceiling >= delta;
                if !(floor_ok && ceiling_ok) {
                    bracket_failures.push(format!("(d={d}, D={big_d}, κ={kappa})"));
                }
                ladders += 1;
            }
        }
    }
    let (fast, time) = within_budget(started, 60);
    outcome(
        worst_h <= 1e-8 && worst_kl <= 1e-8 && bracket_failures.is_empty() && fast,
        format!(
            "closed forms: {cases} cases, max |ΔH| {worst_h:.2e}, max |ΔKL| {worst_kl:.2e} (tol 1e-8); \
             {ladders} ladders, bracket failures {:?}, {time}",
            bracket_failures
        ),
    )
}

fn random_spec<R: Rng>(rng: &mut R) -> Result<MixtureSpec> {
    let d = rng.random_range(1..=6usize);
    let k = rng.random_range(1..=4usize);
    let m = rng.random_range(0.5..1.5);
    let kappa = rng.random_range(1.0..4.0);
    let local = match rng.random_range(0..3) {
        0 => LocalPotential::Isotropic,
        1 => LocalPotential::Diagonal { curvatures: (0..d).map(|i| if i == 0 { m * kappa } else { rng.random_range(m..m * kappa) }).collect() },
        _ => LocalPotential::SoftAbs { m, l: m * kappa },
    };
    let scale = rng.random_range(0.5..4.0);
    let modes = (0..k).map(|_| (0..d).map(|_| rng.random_range(-scale..scale)).collect()).collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    MixtureSpec::new(raw.iter().map(|w| w / total).collect(), modes, local)
}

fn criterion_5() -> Result<Outcome> {
    let started = Instant::now();
    let mut rng = stream_rng(seed(5), 5);
    let mut violations = Vec::new();
    let mut records = 0;
    for case in 0..5 {
        let spec = random_spec(&mut rng)?;
        let ladder = build_ladder(spec.local().smoothness(), spec.local().convexity(), spec.dim(), spec.max_mode_norm())?;
        let report = inequality_suite(&spec, &ladder, 1000, &mut rng)?;
        records += report.records.len();
        for r in report.violations() {
            violations.push(format!("spec {case} ({}): {} margin {:.3e}", spec.local().name(), r.name, r.margin));
        }
    }
    let (fast, time) = within_budget(started, 120);
    outcome(
        violations.is_empty() && fast,
        format!("inequality suite: 5 specs, {records} inequalities x 1000 points, violations {violations:?}, {time}"),
    )
}

fn two_mode_target(big_d: f64) -> Result<(MixtureSpec, Ladder)> {
    let spec = MixtureSpec::symmetric_pair(2, big_d, LocalPotential::Isotropic)?;
    let ladder = build_ladder(1.0, 1.0, 2, big_d)?;
    Ok((spec, ladder))
}

fn calibrated(spec: &MixtureSpec, ladder: &Ladder, config: &TemperingConfig) -> Result<(Ladder, bool)> {
    let report = calibrate_pseudo_weights(spec, ladder, config, 10_000, 100_000)?;
    Ok((report.calibrated_ladder(ladder)?, report.passed))
}

fn cold_slice_fit(spec: &MixtureSpec, ladder: &Ladder, kind: ProposalKind, h: f64) -> Result<(bool, String)> {
    let started = Instant::now();
    let config = TemperingConfig { seed: seed(6), ..TemperingConfig::new(kind, h) };
    let (cal, _) = calibrated(spec, ladder, &config)?;
    let cold = cal.num_levels() - 1;
    let mut samples = Vec::new();
    run_chain_observed(&ChainInit::Default, spec, &cal, &config, 1_000_000, 6, |rec| {
        if rec.step > 0 && rec.level == cold {
            samples.push(rec.x.clone());
        }
    })?;
    let fit = fit_cold_samples(&samples, spec)?;
    let (fast, time) = within_budget(started, 600);
    let p: Vec<String> = fit.ks.iter().map(|k| format!("{:.3}", k.p_value)).collect();
    Ok((
        fit.passed && fast,
        format!(
            "{} cold samples, thinning {}, ESS {}, KS p [{}], occupancy {:.3?}, {time}",
            fit.samples,
            fit.thinning,
            fit.effective_samples,
            p.join(", "),
            fit.occupancy
        ),
    ))
}

fn criterion_6() -> Result<Outcome> {
    let (spec, ladder) = two_mode_target(4.0)?;
    let sizes = step_sizes(&spec, &ladder, &StepSizeParams::default())?;
    let mut all = true;
    let mut parts = Vec::new();
    for (kind, h) in [(ProposalKind::Rwm, sizes.rwm_h), (ProposalKind::Mala, sizes.mala_h)] {
        let (ok, detail) = cold_slice_fit(&spec, &ladder, kind, h).unwrap_or_else(|e| (false, format!("error: {e}")));
        all &= ok;
        parts.push(format!("{kind:?} h={h:.3e} {}: {detail}", if ok { "ok" } else { "FAIL" }));
    }
    outcome(all, format!("cold-slice fit (T={}): {}", ladder.num_levels(), parts.join("; ")))
}

#[derive(Deserialize)]
struct Pilot {
    seed: u64,
    steps: u64,
    single_level_max: u64,
    full_ladder_min: u64,
    pilot_single_level: u64,
    pilot_full_ladder: u64,
}

fn criterion_7() -> Result<Outcome> {
    let started = Instant::now();
    let pilot: Pilot = serde_json::from_str(include_str!("data/pilot_traversals.json"))?;
    let (spec, ladder) = two_mode_target(8.0)?;
    let config = TemperingConfig { seed: pilot.seed, ..TemperingConfig::new(ProposalKind::Rwm, 1.0 / spec.dim() as f64) };
    let single = Ladder::from_betas(vec![1.0])?;
    let lone = run_chain_observed(&ChainInit::Default, &spec, &single, &config, pilot.steps, 7, |_| {})?;
    let (cal, _) = calibrated(&spec, &ladder, &config)?;
    let full = run_chain_observed(&ChainInit::Default, &spec, &cal, &config, pilot.steps, 7, |_| {})?;
    let (a, b) = (lone.mode_traversals.unwrap_or(0), full.mode_traversals.unwrap_or(0));
    let (fast, time) = within_budget(started, 300);
    let reproduced = a == pilot.pilot_single_level && b == pilot.pilot_full_ladder;
    outcome(
        a <= pilot.single_level_max && b >= pilot.full_ladder_min && fast,
        format!(
            "tempering necessity (D=8, {} steps): single level {a} traversals ({} x-moves, need <= {}), \
             full ladder T={} {b} traversals ({} x-moves, {} cold; need >= {}), pilot reproduced: {reproduced}, {time}",
            pilot.steps,
            lone.x_moves,
            pilot.single_level_max,
            cal.num_levels(),
            full.x_moves,
            full.cold_traversals.unwrap_or(0),
            pilot.full_ladder_min
        ),
    )
}

fn criterion_8() -> Result<Outcome> {
    let started = Instant::now();
    let (spec, ladder) = two_mode_target(4.0)?;
    let h = 1.0 / spec.dim() as f64;
    let config = TemperingConfig { seed: seed(8), ..TemperingConfig::new(ProposalKind::Rwm, h) };
    let est = projected_chain_estimate(&spec, &ladder, &config, 10_000)?;

    // Live swap acceptance per adjacent pair, with batch-means standard errors.
    let (cal, _) = calibrated(&spec, &ladder, &config)?;
    let t = cal.num_levels();
    let steps: u64 = 1_000_000;
    let batches = 20usize;
    let batch_len = steps / batches as u64;
    let mut att = vec![vec![0u64; t - 1]; batches];
    let mut acc = vec![vec![0u64; t - 1]; batches];
    let summary = run_chain_observed(&ChainInit::Default, &spec, &cal, &config, steps, 8, |rec| {
        let pair = match rec.move_type {
            MoveType::SwapUp => rec.from_level,
            MoveType::SwapDown => rec.from_level - 1,
            _ => return,
        };
        let b = (((rec.step - 1) / batch_len) as usize).min(batches - 1);
        att[b][pair] += 1;
        acc[b][pair] += rec.accepted as u64;
    })?;
    let (delta, _) = exact_overlap(&spec, &cal)?;
    let occ = &summary.occupancy;
    let r_tilde = occ.iter().copied().fold(f64::INFINITY, f64::min) / occ.iter().copied().fold(0.0, f64::max);
    let floor = r_tilde * (1.0 - delta.sqrt());
    let mut worst = f64::INFINITY;
    let mut swap_ok = true;
    for k in 0..t - 1 {
        let rates: Vec<f64> =
            (0..batches).filter(|&b| att[b][k] > 0).map(|b| acc[b][k] as f64 / att[b][k] as f64).collect();
        let n = rates.len() as f64;
        let mean = summary.swap_acceptance[k].unwrap_or(0.0);
        let var = rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0).max(1.0);
        let se = (var / n).sqrt();
        worst = worst.min(mean - (floor - 3.0 * se));
        swap_ok &= mean >= floor - 3.0 * se;
    }
    let (fast, time) = within_budget(started, 600);
    outcome(
        est.passed && swap_ok && fast,
        format!(
            "projected chain (T={}): gap {:.4e}, 99% lower {:.4e} vs bound {:.4e} (canonical {:.4e}); \
             swap floor r̃(1-√Δ) = {floor:.4} with r̃ {r_tilde:.3}, Δ {delta:.3e}, worst margin {worst:.4}, {time}",
            t, est.gap, est.gap_lower, est.lemma_bound, est.canonical_bound
        ),
    )
}

fn criterion_9() -> Result<Outcome> {
    let started = Instant::now();
    let (h, d) = (0.5, 2);
    let base = beta1_conductance_bound(1.0, 2.0, h, d, 0.0);
    let mut worst_rate = 0.0f64;
    for &big_d in &[4.0f64, 8.0] {
        let observed = beta1_conductance_bound(1.0, big_d, h, d, 0.0) / base;
        let expected = (-(big_d * big_d - 4.0) / (2.0 + h)).exp();
        worst_rate = worst_rate.max((observed / expected - 1.0).abs());
    }
    let mut envelope_failures = 0;
    let mut points = 0;
    for &dim in &[1usize, 2, 10, 100] {
        for i in 1..=1000 {
            let rho = 0.5 * i as f64 / 1000.0;
            let env = (-rho * rho * dim as f64 / 48.0).exp();
            let ladder = Ladder::geometric(1.0 + rho, 4)?;
            let bound = ratio_conductance_bound(&ladder, dim)?;
            if f_overlap(rho, dim)? > env || bound > 16.0 * env * (1.0 + 1e-12) {
                envelope_failures += 1;
            }
            points += 1;
        }
    }
    let (spec, ladder) = two_mode_target(4.0)?;
    let witness = counterexample_witness(&spec, &ladder, h, 0.0, 100_000, seed(9))?;
    let flow_worst = witness
        .bounds
        .records
        .iter()
        .map(|r| r.margin)
        .fold(f64::INFINITY, f64::min);
    let (fast, time) = within_budget(started, 300);
    outcome(
        worst_rate <= 0.05 && envelope_failures == 0 && witness.passed() && fast,
        format!(
            "counterexample: D-decay max rel. error {worst_rate:.2e} (tol 5%), envelope failures {envelope_failures}/{points}, \
             half-space flow within 3 SE: {} (worst margin {flow_worst:.3e}), {time}",
            witness.passed()
        ),
    )
}

fn criterion_10() -> Result<Outcome> {
    let started = Instant::now();
    let mut worst_z = 0.0f64;
    let mut pairs = 0;
    for (i, &d) in [1usize, 2, 5].iter().enumerate() {
        let spec = MixtureSpec::new(vec![1.0], vec![vec![0.0; d]], LocalPotential::Isotropic)?;
        let ladder = Ladder::geometric(1.5, 5)?;
        let config = TemperingConfig { seed: seed(10) + 100 * (i as u64 + 1), ..TemperingConfig::new(ProposalKind::Rwm, 1.0 / d as f64) };
        let report = calibrate_pseudo_weights(&spec, &ladder, &config, 10_000, 100_000)?;
        for (k, est) in report.ratio_estimates.iter().enumerate() {
            let zeta_diff = report.log_weights[k + 1] - report.log_weights[k];
            let analytic = 0.5 * d as f64 * (ladder.beta(k + 1) / ladder.beta(k)).ln();
            worst_z = worst_z.max((zeta_diff - analytic).abs() / est.log_se);
            pairs += 1;
        }
    }
    let (spec, ladder) = two_mode_target(4.0)?;
    let config = TemperingConfig { seed: seed(10), ..TemperingConfig::new(ProposalKind::Rwm, 0.5) };
    let report = calibrate_pseudo_weights(&spec, &ladder, &config, 10_000, 1_000_000)?;
    let (lo, hi) = report
        .occupancy
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &o| (lo.min(o), hi.max(o)));
    let (fast, time) = within_budget(started, 600);
    outcome(
        worst_z <= 3.0 && report.passed && fast,
        format!(
            "calibration: {pairs} K=1 pairs, worst |error|/SE {worst_z:.2} (need <= 3); K=2 T={} occupancy in [{lo:.4}, {hi:.4}] \
             (band [{:.4}, {:.4}]), {time}",
            ladder.num_levels(),
            1.0 / (3.0 * ladder.num_levels() as f64),
            3.0 / ladder.num_levels() as f64
        ),
    )
}

type Criterion = fn() -> Result<Outcome>;

fn main() {
    let all: [(usize, Criterion); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (n, f) in all {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let line = match f() {
            Ok(o) => {
                if !o.passed {
                    failed.push(n);
                }
                format!("criterion {n:>2}: {} {}", if o.passed { "PASS" } else { "FAIL" }, o.detail)
            }
            Err(e) => {
                failed.push(n);
                format!("criterion {n:>2}: FAIL error: {e}")
            }
        };
        let _ = writeln!(err, "{line}");
    }
    if !failed.is_empty() {
        let _ = writeln!(err, "acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
    let _ = writeln!(err, "acceptance: all selected criteria pass");
}
