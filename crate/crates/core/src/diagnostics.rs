//! Monte Carlo and closed-form checks of the continuous-space quantities:
//! the projected chain on `[T]×[K]`, the gradient and acceptance
//! inequalities, the two-Gaussian counterexample bounds, and cold-slice
//! goodness of fit.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::finitelab::{spectral_gap, FiniteChain};
use crate::ladder::{exact_overlap, f_overlap, level_weight_summary, quadratic_hellinger, Ladder};
use crate::logspace::{dist, norm, pairwise_mean};
use crate::rng::{standard_normal, stream_rng};
use crate::targets::{log_mixture_unnormalized, potential_and_gradient, MixtureSpec};
use crate::tempering::{log_proposal_density, ProposalKind, TemperingConfig, TraceRecord};

pub const MIN_ENTRY_SAMPLES: usize = 10_000;
pub const MIN_SUITE_POINTS: usize = 1000;
pub const INEQUALITY_SLACK: f64 = 1e-9;
pub const STANDARD_ERRORS: f64 = 3.0;
const BATCHES: usize = 20;
const BOOTSTRAP_RESAMPLES: usize = 400;
const BOOTSTRAP_QUANTILE: f64 = 0.01;
pub const KS_LEVEL: f64 = 0.01;
pub const OCCUPANCY_TOLERANCE: f64 = 0.05;
pub const MIN_EFFECTIVE_SAMPLES: usize = 1000;

/// One checked inequality in the form `lhs ≤ rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs` exactly as computed.
    pub margin: f64,
    /// Allowed negative margin (roundoff or Monte Carlo error).
    pub slack: f64,
    pub samples: usize,
    pub holds: bool,
}

impl BoundRecord {
    pub fn new(name: &str, lhs: f64, rhs: f64, slack: f64, samples: usize) -> Self {
        let margin = rhs - lhs;
        let holds = margin >= -slack || rhs == f64::INFINITY;
        BoundRecord { name: name.to_string(), lhs, rhs, margin, slack, samples, holds }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub records: Vec<BoundRecord>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.records.iter().all(|r| r.holds)
    }

    pub fn violations(&self) -> Vec<&BoundRecord> {
        self.records.iter().filter(|r| !r.holds).collect()
    }

    pub fn get(&self, name: &str) -> Option<&BoundRecord> {
        self.records.iter().find(|r| r.name == name)
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = pairwise_mean(values);
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_mean(&sq) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Monte Carlo estimate of the projected chain `P̄` on `[T]×[K]`, state
/// `(i, j)` stored at `i·K + j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedEstimate {
    pub levels: usize,
    pub labels: usize,
    pub matrix: Vec<Vec<f64>>,
    pub standard_errors: Vec<Vec<f64>>,
    pub stationary: Vec<f64>,
    pub level_weights: Vec<f64>,
    pub label_weights: Vec<f64>,
    pub gap: f64,
    /// Lower 1% quantile of the gap over batch-bootstrap resamples.
    pub gap_lower: f64,
    pub canonical_bound: f64,
    /// `(α r̃ r_min q_adj/(4T))·min{1 - √Δ, H²}` with exact Gaussian `Δ, H`.
    pub lemma_bound: f64,
    pub delta: f64,
    pub hellinger: f64,
    pub samples_per_entry: usize,
    pub passed: bool,
}

impl ProjectedEstimate {
    pub fn chain(&self) -> Result<FiniteChain> {
        FiniteChain::from_rows(self.matrix.clone(), self.stationary.clone())
    }

    pub fn state(&self, level: usize, label: usize) -> usize {
        level * self.labels + label
    }
}

struct Edge {
    from: usize,
    to: usize,
    /// Per-batch estimates of the symmetric flow `π(a)P̄(a, b)`.
    batches: Vec<f64>,
}

fn level_log_density(spec: &MixtureSpec, beta: f64, log_c: f64, j: usize, x: &[f64]) -> f64 {
    -beta * spec.component_potential(j, x) - log_c
}

/// Batch means of `(αq/2)·w_j·∫min{r_i π_{i,j}, r_{i+1} π_{i+1,j}}`, each
/// averaging an estimator under `π_{i,j}` and one under `π_{i+1,j}`.
#[allow(clippy::too_many_arguments)]
fn adjacent_flow_batches<R: Rng + ?Sized>(
    spec: &MixtureSpec,
    betas: (f64, f64),
    r: (f64, f64),
    j: usize,
    alpha: f64,
    q_adj: f64,
    n_mc: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (b0, b1) = betas;
    let local = spec.local();
    let d = spec.dim();
    let c0 = local.log_normalizer(b0, d).ok_or(Error::UnsupportedNormalizer(local.name()))?;
    let c1 = local.log_normalizer(b1, d).ok_or(Error::UnsupportedNormalizer(local.name()))?;
    let mu = &spec.modes()[j];
    let per = n_mc / BATCHES;
    let mut out = Vec::with_capacity(BATCHES);
    for _ in 0..BATCHES {
        let mut lower = Vec::with_capacity(per);
        let mut upper = Vec::with_capacity(per);
        for _ in 0..per {
            let x = local.sample(b0, mu, rng);
            let log_ratio = (r.1.ln() + level_log_density(spec, b1, c1, j, &x))
                - (r.0.ln() + level_log_density(spec, b0, c0, j, &x));
            lower.push(r.0 * log_ratio.exp().min(1.0));
            let y = local.sample(b1, mu, rng);
            let log_ratio = (r.0.ln() + level_log_density(spec, b0, c0, j, &y))
                - (r.1.ln() + level_log_density(spec, b1, c1, j, &y));
            upper.push(r.1 * log_ratio.exp().min(1.0));
        }
        let avg = 0.5 * (pairwise_mean(&lower) + pairwise_mean(&upper));
        out.push(0.5 * alpha * q_adj * spec.weights()[j] * avg);
    }
    Ok(out)
}

/// Batch means of `½ r_i w_j w_{j'} ∫ π_{i,j}π_{i,j'}/π_i`, symmetrized over
/// draws from both components.
fn label_flow_batches<R: Rng + ?Sized>(
    spec: &MixtureSpec,
    beta: f64,
    r: f64,
    j: usize,
    jp: usize,
    n_mc: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let local = spec.local();
    let w = spec.weights();
    let per = n_mc / BATCHES;
    let mut out = Vec::with_capacity(BATCHES);
    for _ in 0..BATCHES {
        let mut a = Vec::with_capacity(per);
        let mut b = Vec::with_capacity(per);
        for _ in 0..per {
            let x = local.sample(beta, &spec.modes()[j], rng);
            a.push(w[j] * crate::targets::label_weights_at(spec, beta, &x)?[jp]);
            let y = local.sample(beta, &spec.modes()[jp], rng);
            b.push(w[jp] * crate::targets::label_weights_at(spec, beta, &y)?[j]);
        }
        out.push(0.5 * r * 0.5 * (pairwise_mean(&a) + pairwise_mean(&b)));
    }
    Ok(out)
}

fn matrix_from_flows(pi: &[f64], edges: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
    let n = pi.len();
    let mut m = vec![vec![0.0; n]; n];
    for &(a, b, f) in edges {
        m[a][b] = f / pi[a];
        m[b][a] = f / pi[b];
    }
    for (a, row) in m.iter_mut().enumerate() {
        let off: f64 = row.iter().enumerate().filter(|(b, _)| *b != a).map(|(_, v)| v).sum();
        row[a] = (1.0 - off).max(0.0);
    }
    m
}

fn gap_of(pi: &[f64], matrix: Vec<Vec<f64>>) -> Result<f64> {
    Ok(spectral_gap(&FiniteChain::from_rows(matrix, pi.to_vec())?))
}

/// Estimates `P̄` for the auxiliary chain with level weights `r = softmax(ζ)`,
/// and compares its gap with the closed-form lower bound.
///
/// Entries come from exact Gaussian draws; each symmetric flow is the mean of
/// `BATCHES` batch estimates, and the gap's 99% lower confidence limit comes
/// from resampling those batches.
pub fn projected_chain_estimate(
    spec: &MixtureSpec,
    ladder: &Ladder,
    config: &TemperingConfig,
    n_mc: usize,
) -> Result<ProjectedEstimate> {
    config.validate()?;
    if !spec.local().is_quadratic() {
        return Err(Error::Unsupported(format!(
            "projected-chain estimates need exact component draws; {} has none",
            spec.local().name()
        )));
    }
    if n_mc < MIN_ENTRY_SAMPLES {
        return Err(Error::InsufficientSamples { got: n_mc, need: MIN_ENTRY_SAMPLES });
    }
    let t = ladder.num_levels();
    let k = spec.num_components();
    let r = ladder.level_weights();
    let w = spec.weights().to_vec();
    let raw: Vec<f64> = (0..t).flat_map(|i| w.iter().map(move |wj| (i, *wj))).map(|(i, wj)| r[i] * wj).collect();
    let total: f64 = raw.iter().sum();
    let pi: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let idx = |i: usize, j: usize| i * k + j;

    let mut jobs: Vec<(usize, usize, usize, Option<usize>)> = Vec::new();
    for i in 0..t.saturating_sub(1) {
        for j in 0..k {
            jobs.push((jobs.len(), i, j, None));
        }
    }
    for i in 0..t {
        for j in 0..k {
            for jp in (j + 1)..k {
                jobs.push((jobs.len(), i, j, Some(jp)));
            }
        }
    }
    let edges: Vec<Edge> = jobs
        .par_iter()
        .map(|&(n, i, j, jp)| {
            let mut rng = stream_rng(config.seed, n as u64);
            match jp {
                None => Ok(Edge {
                    from: idx(i, j),
                    to: idx(i + 1, j),
                    batches: adjacent_flow_batches(
                        spec,
                        (ladder.beta(i), ladder.beta(i + 1)),
                        (r[i], r[i + 1]),
                        j,
                        config.alpha,
                        config.q_adj,
                        n_mc,
                        &mut rng,
                    )?,
                }),
                Some(jp) => Ok(Edge {
                    from: idx(i, j),
                    to: idx(i, jp),
                    batches: label_flow_batches(spec, ladder.beta(i), r[i], j, jp, n_mc, &mut rng)?,
                }),
            }
        })
        .collect::<Result<Vec<Edge>>>()?;

    let flows: Vec<(usize, usize, f64)> = edges.iter().map(|e| (e.from, e.to, pairwise_mean(&e.batches))).collect();
    let matrix = matrix_from_flows(&pi, &flows);
    let n = pi.len();
    let mut se = vec![vec![0.0; n]; n];
    for e in &edges {
        let (_, s) = mean_and_se(&e.batches);
        se[e.from][e.to] = s / pi[e.from];
        se[e.to][e.from] = s / pi[e.to];
    }
    let gap = gap_of(&pi, matrix.clone())?;

    let gaps = (0..BOOTSTRAP_RESAMPLES)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(config.seed ^ 0xb007_57a9, b as u64);
            let resampled: Vec<(usize, usize, f64)> = edges
                .iter()
                .map(|e| {
                    let s: f64 = (0..BATCHES).map(|_| e.batches[rng.random_range(0..BATCHES)]).sum();
                    (e.from, e.to, s / BATCHES as f64)
                })
                .collect();
            gap_of(&pi, matrix_from_flows(&pi, &resampled))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut sorted = gaps;
    sorted.sort_by(f64::total_cmp);
    let gap_lower = quantile(&sorted, BOOTSTRAP_QUANTILE);

    let (delta, hellinger) = exact_overlap(spec, ladder)?;
    let (r_min, r_tilde) = level_weight_summary(ladder);
    let lemma_bound = config.alpha * r_tilde * r_min * config.q_adj / (4.0 * t as f64)
        * (1.0 - delta.sqrt()).min(hellinger * hellinger);
    let canonical_bound = canonical_path_bound(&matrix, &r, &w)?;
    Ok(ProjectedEstimate {
        levels: t,
        labels: k,
        matrix,
        standard_errors: se,
        stationary: pi,
        level_weights: r,
        label_weights: w,
        gap,
        gap_lower,
        canonical_bound,
        lemma_bound,
        delta,
        hellinger,
        samples_per_entry: BATCHES * (n_mc / BATCHES),
        passed: gap_lower >= lemma_bound,
    })
}

/// `λ(P̄) ≥ (1/2T)·min{Λ₁, Λ₂}` with `Λ₁ = min r_i P̄((i,j),(i+1,j))` and
/// `Λ₂ = min_{j≠j'} (r_min/w_{j'}) P̄((1,j),(1,j'))`. An empty minimum is
/// `+∞`; a single-state grid returns 0.
pub fn canonical_path_bound(matrix: &[Vec<f64>], r: &[f64], w: &[f64]) -> Result<f64> {
    let (t, k) = (r.len(), w.len());
    if matrix.len() != t * k || matrix.iter().any(|row| row.len() != t * k) {
        return Err(Error::DimensionMismatch { expected: t * k, got: matrix.len() });
    }
    let idx = |i: usize, j: usize| i * k + j;
    let mut lambda1 = f64::INFINITY;
    for i in 0..t.saturating_sub(1) {
        for j in 0..k {
            lambda1 = lambda1.min(r[i] * matrix[idx(i, j)][idx(i + 1, j)]);
        }
    }
    let r_min = r.iter().copied().fold(f64::INFINITY, f64::min);
    let mut lambda2 = f64::INFINITY;
    for j in 0..k {
        for jp in 0..k {
            if j != jp {
                lambda2 = lambda2.min(r_min / w[jp] * matrix[idx(0, j)][idx(0, jp)]);
            }
        }
    }
    let m = lambda1.min(lambda2);
    Ok(if m.is_finite() { m / (2.0 * t as f64) } else { 0.0 })
}

/// Gradient, smoothness, MALA-mean, and acceptance inequalities at
/// `n_points` random points per inequality. Each record keeps the tightest
/// point; roundoff slack is `1e-9·max(1, |lhs|, |rhs|)`.
pub fn inequality_suite<R: Rng + ?Sized>(
    spec: &MixtureSpec,
    ladder: &Ladder,
    n_points: usize,
    rng: &mut R,
) -> Result<BoundReport> {
    if n_points < MIN_SUITE_POINTS {
        return Err(Error::InsufficientSamples { got: n_points, need: MIN_SUITE_POINTS });
    }
    let local = spec.local();
    let l = local.smoothness();
    let m = local.convexity();
    let big_d = spec.max_mode_norm();
    let d = spec.dim();
    let k = spec.num_components();
    let scale = 3.0 * (big_d + 1.0 / m.sqrt());
    let draw = |rng: &mut R| -> Vec<f64> { standard_normal(rng, d).into_iter().map(|v| v * scale).collect() };

    let mut tightest: Vec<BoundRecord> = Vec::new();
    let mut keep = |rec: BoundRecord| match tightest.iter_mut().find(|r| r.name == rec.name) {
        Some(cur) => {
            if rec.margin + rec.slack < cur.margin + cur.slack {
                *cur = rec;
            }
        }
        None => tightest.push(rec),
    };
    let check = |name: &str, lhs: f64, rhs: f64| {
        let slack = INEQUALITY_SLACK * 1f64.max(lhs.abs()).max(rhs.abs());
        BoundRecord::new(name, lhs, rhs, slack, n_points)
    };

    for _ in 0..n_points {
        let x = draw(rng);
        let y = draw(rng);
        let z = draw(rng);
        let beta = ladder.beta(rng.random_range(0..ladder.num_levels()));
        let j = rng.random_range(0..k);
        let sb = beta.sqrt();
        let (ux, gux) = potential_and_gradient(spec, &x)?;
        let (uy, _) = potential_and_gradient(spec, &y)?;
        let gfx = local.gradient(&x);
        let growth = l * (sb * norm(&x) + big_d);

        let dev: Vec<f64> = gux.iter().zip(&gfx).map(|(a, b)| a - b).collect();
        keep(check("mixture_gradient_deviation", norm(&dev), l * big_d));

        let step: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let lin: f64 = gux.iter().zip(&step).map(|(a, b)| a * b).sum();
        keep(check("mixture_smoothness", uy - ux - lin, 0.5 * l * norm(&step).powi(2)));

        let shifted: Vec<f64> = x.iter().zip(&spec.modes()[j]).map(|(a, b)| a - b).collect();
        keep(check("local_gradient_growth", sb * norm(&local.gradient(&shifted)), growth));
        keep(check("mixture_gradient_growth", sb * norm(&gux), growth));

        let h_any = rng.random::<f64>() * 2.0 / l;
        let yxz = mala_proposal(&x, &gux, &z, h_any, beta);
        let (_, guy) = potential_and_gradient(spec, &yxz)?;
        keep(check(
            "proposal_gradient_growth",
            sb * norm(&guy),
            (2.0 * h_any).sqrt() * l * norm(&z) + (1.0 + h_any * l) * growth,
        ));

        let h_mean = (1.0 - rng.random::<f64>()) / l;
        let gfy = local.gradient(&y);
        let mx: Vec<f64> = x.iter().zip(&gfx).map(|(a, g)| a - h_mean * g).collect();
        let my: Vec<f64> = y.iter().zip(&gfy).map(|(a, g)| a - h_mean * g).collect();
        keep(check("mala_mean_contraction", dist(&mx, &my), dist(&x, &y)));

        // Step size satisfying h ≤ c_h/(L²(√β‖x‖ + D)²) with c_h ∈ (0, 1].
        let c_h = 1.0 - rng.random::<f64>();
        let h = (1.0 - rng.random::<f64>()) * c_h / (growth * growth);
        let h = if h.is_finite() { h.min(1.0 / l) } else { 1.0 / l };
        let hl = h * l;
        let zn = norm(&z);
        let yxz = mala_proposal(&x, &gux, &z, h, beta);
        let (_, guy) = potential_and_gradient(spec, &yxz)?;
        let potential_drop = beta * (spec.component_potential(j, &x) - spec.component_potential(j, &yxz));
        let floor = -hl * zn * zn - (1.0 + hl) * (2.0 * c_h).sqrt() * zn - (1.0 + hl / 2.0) * c_h.sqrt();
        keep(check("acceptance_potential_floor", floor, potential_drop));
        let log_q = log_proposal_density(ProposalKind::Mala, h, beta, &yxz, Some(&guy), &x)
            - log_proposal_density(ProposalKind::Mala, h, beta, &x, Some(&gux), &yxz);
        let floor = -hl * (1.0 + hl / 2.0) * zn * zn
            - (2.0 + 3.0 * hl + hl * hl) * (c_h / 2.0).sqrt() * zn
            - (1.0 + hl / 2.0).powi(2) * c_h;
        keep(check("acceptance_proposal_floor", floor, log_q));
    }
    Ok(BoundReport { records: tightest })
}

/// `y(x, z) = x - h∇U(x) + √(2h/β)·z`.
fn mala_proposal(x: &[f64], grad: &[f64], z: &[f64], h: f64, beta: f64) -> Vec<f64> {
    let s = (2.0 * h / beta).sqrt();
    x.iter().zip(grad).zip(z).map(|((a, g), e)| a - h * g + s * e).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelFlow {
    pub beta: f64,
    /// Half-space flow under the component-tempered mixture `π_i`.
    pub mixture_flow: f64,
    pub mixture_flow_se: f64,
    /// `w_min·flow` and `flow/w_min`, which bracket the flow under `π*_i`.
    pub sandwich_lower: f64,
    pub sandwich_upper: f64,
    /// `2(2/(2+h))^{d/2} exp(-β_i D²/(2+h))`.
    pub numerator_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub separation: f64,
    pub h: f64,
    pub s: f64,
    /// `(4/(1-2s))(2/(2+h))^{d/2} exp(-β₁D²/(2+h))`.
    pub beta1_bound: f64,
    /// `16·min_i F(ρ_i)`, defined for `s < 1/(4T)` and `T ≥ 2`.
    pub ratio_bound: Option<f64>,
    pub levels: Vec<LevelFlow>,
    /// `Σ r_i·flow_i/w_min`, an upper estimate of `P*(A, A^c)`.
    pub total_flow_upper: f64,
    pub total_flow_upper_se: f64,
    pub bounds: BoundReport,
}

impl CounterexampleReport {
    pub fn passed(&self) -> bool {
        self.bounds.passed()
    }
}

/// `(4/(1-2s))(2/(2+h))^{d/2} exp(-β₁D²/(2+h))`.
pub fn beta1_conductance_bound(beta1: f64, separation: f64, h: f64, d: usize, s: f64) -> f64 {
    4.0 / (1.0 - 2.0 * s)
        * (0.5 * d as f64 * (2.0 / (2.0 + h)).ln() - beta1 * separation * separation / (2.0 + h)).exp()
}

/// `16·min_i F(ρ_i)` over adjacent ratios of the ladder.
pub fn ratio_conductance_bound(ladder: &Ladder, d: usize) -> Result<f64> {
    let mut best = f64::INFINITY;
    for w in ladder.betas().windows(2) {
        best = best.min(f_overlap(w[1] / w[0] - 1.0, d)?);
    }
    Ok(16.0 * best)
}

fn check_counterexample_spec(spec: &MixtureSpec, ladder: &Ladder) -> Result<f64> {
    let bad = |why: &str| Err(Error::InvalidArgument(format!("counterexample target: {why}")));
    if spec.num_components() != 2 || spec.weights().iter().any(|w| (w - 0.5).abs() > 1e-12) {
        return bad("needs two equally weighted components");
    }
    if !matches!(spec.local(), crate::targets::LocalPotential::Isotropic) {
        return bad("needs unit-covariance Gaussian components");
    }
    let (a, b) = (&spec.modes()[0], &spec.modes()[1]);
    let big_d = a[0];
    let on_axis = |m: &[f64]| m[1..].iter().all(|v| *v == 0.0);
    if !(big_d > 0.0 && b[0] == -big_d && on_axis(a) && on_axis(b)) {
        return bad("modes must be ±(D, 0, …, 0) with D > 0");
    }
    let z = ladder.log_weights();
    if z.iter().any(|v| *v != z[0]) {
        return bad("level weights must be uniform");
    }
    Ok(big_d)
}

/// Closed-form conductance ceilings for the symmetric two-Gaussian target
/// and a Monte Carlo check of the half-space flow behind the first one.
pub fn counterexample_witness(
    spec: &MixtureSpec,
    ladder: &Ladder,
    h: f64,
    s: f64,
    n_mc: usize,
    seed: u64,
) -> Result<CounterexampleReport> {
    let big_d = check_counterexample_spec(spec, ladder)?;
    if !(h > 0.0 && h.is_finite()) || !(0.0..0.5).contains(&s) {
        return Err(Error::InvalidArgument(format!("need h > 0 and s in [0, 1/2), got h={h}, s={s}")));
    }
    if n_mc < 2 {
        return Err(Error::InsufficientSamples { got: n_mc, need: 2 });
    }
    let d = spec.dim();
    let t = ladder.num_levels();
    let w_min = spec.min_weight();
    let beta1_bound = beta1_conductance_bound(ladder.beta(0), big_d, h, d, s);
    let ratio_bound = if t >= 2 && s < 1.0 / (4.0 * t as f64) {
        Some(ratio_conductance_bound(ladder, d)?)
    } else {
        None
    };
    let levels = (0..t)
        .into_par_iter()
        .map(|i| {
            let beta = ladder.beta(i);
            let mut rng = stream_rng(seed, i as u64);
            let step = (2.0 * h / beta).sqrt();
            let mut vals = Vec::with_capacity(n_mc);
            for _ in 0..n_mc {
                let j = rng.random_range(0..2);
                let x = spec.local().sample(beta, &spec.modes()[j], &mut rng);
                if x[0] <= 0.0 {
                    vals.push(0.0);
                    continue;
                }
                let y: Vec<f64> = x.iter().zip(standard_normal(&mut rng, d)).map(|(a, e)| a + step * e).collect();
                if y[0] >= 0.0 {
                    vals.push(0.0);
                    continue;
                }
                let lr = log_mixture_unnormalized(spec, beta, &y)? - log_mixture_unnormalized(spec, beta, &x)?;
                vals.push(lr.exp().min(1.0));
            }
            let (flow, se) = mean_and_se(&vals);
            let numerator = 2.0 * (0.5 * d as f64 * (2.0 / (2.0 + h)).ln() - beta * big_d * big_d / (2.0 + h)).exp();
            Ok(LevelFlow {
                beta,
                mixture_flow: flow,
                mixture_flow_se: se,
                sandwich_lower: w_min * flow,
                sandwich_upper: flow / w_min,
                numerator_bound: numerator,
            })
        })
        .collect::<Result<Vec<LevelFlow>>>()?;
    let r = 1.0 / t as f64;
    let total = levels.iter().map(|l| r * l.sandwich_upper).sum::<f64>();
    let total_se = levels.iter().map(|l| (r * l.mixture_flow_se / w_min).powi(2)).sum::<f64>().sqrt();
    let mut records: Vec<BoundRecord> = levels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            BoundRecord::new(
                &format!("half_space_flow_level_{i}"),
                l.sandwich_upper,
                l.numerator_bound,
                STANDARD_ERRORS * l.mixture_flow_se / w_min,
                n_mc,
            )
        })
        .collect();
    let max_numerator = levels.iter().map(|l| l.numerator_bound).fold(0.0, f64::max);
    records.push(BoundRecord::new("half_space_flow_total", total, max_numerator, STANDARD_ERRORS * total_se, n_mc * t));
    Ok(CounterexampleReport {
        separation: big_d,
        h,
        s,
        beta1_bound,
        ratio_bound,
        levels,
        total_flow_upper: total,
        total_flow_upper_se: total_se,
        bounds: BoundReport { records },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub samples: usize,
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// CDF of coordinate `coord` under the untempered mixture with a quadratic
/// local potential.
pub fn mixture_marginal_cdf(spec: &MixtureSpec, coord: usize, t: f64) -> Result<f64> {
    let c = spec
        .local()
        .curvature(coord)
        .ok_or_else(|| Error::Unsupported(format!("{} has no Gaussian marginal", spec.local().name())))?;
    Ok(spec
        .weights()
        .iter()
        .zip(spec.modes())
        .map(|(w, mu)| w * std_normal_cdf((t - mu[coord]) * c.sqrt()))
        .sum())
}

/// Asymptotic Kolmogorov tail `P(K > λ)`.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Dual series converges quickly for small λ.
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20).map(|k| (-(2 * k - 1) as f64 * (2 * k - 1) as f64 * c).exp()).sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// One-sample KS test of `values` against `cdf`, with the Stephens
/// small-sample correction to the asymptotic p-value.
pub fn ks_test<F: Fn(f64) -> f64>(values: &[f64], cdf: F) -> KsResult {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut stat = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        stat = stat.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sn = n.sqrt();
    KsResult { statistic: stat, p_value: kolmogorov_tail((sn + 0.12 + 0.11 / sn) * stat), samples: v.len() }
}

/// Integrated autocorrelation time with Sokal's automatic window
/// (smallest `M ≥ 5τ(M)`).
pub fn integrated_autocorrelation(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 4 {
        return 1.0;
    }
    let mean = pairwise_mean(values);
    let c: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let c0: f64 = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..n / 2 {
        let ck: f64 = c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        tau += 2.0 * ck / c0;
        if lag as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalFit {
    pub samples: usize,
    pub autocorrelation_times: Vec<f64>,
    pub thinning: usize,
    pub effective_samples: usize,
    pub ks: Vec<KsResult>,
    /// Fraction of samples whose nearest mode is `j`.
    pub occupancy: Vec<f64>,
    pub weights: Vec<f64>,
    pub max_occupancy_error: f64,
    /// Enough effective samples for the asymptotic KS distribution.
    pub ks_valid: bool,
    pub passed: bool,
}

/// Goodness of fit of samples from the coldest level against the exact
/// mixture marginals and component weights.
pub fn fit_cold_samples(samples: &[Vec<f64>], spec: &MixtureSpec) -> Result<MarginalFit> {
    if !spec.local().is_quadratic() {
        return Err(Error::Unsupported(format!("{} has no Gaussian marginal", spec.local().name())));
    }
    if samples.is_empty() {
        return Err(Error::InsufficientSamples { got: 0, need: MIN_EFFECTIVE_SAMPLES });
    }
    let d = spec.dim();
    let n = samples.len();
    let taus: Vec<f64> = (0..d)
        .into_par_iter()
        .map(|k| integrated_autocorrelation(&samples.iter().map(|x| x[k]).collect::<Vec<f64>>()))
        .collect();
    let thinning = taus.iter().copied().fold(1.0, f64::max).ceil() as usize;
    let thinned: Vec<&Vec<f64>> = samples.iter().step_by(thinning).collect();
    let ks = (0..d)
        .map(|k| {
            let vals: Vec<f64> = thinned.iter().map(|x| x[k]).collect();
            let cdf = |t: f64| mixture_marginal_cdf(spec, k, t).unwrap_or(f64::NAN);
            ks_test(&vals, cdf)
        })
        .collect::<Vec<KsResult>>();
    let mut counts = vec![0usize; spec.num_components()];
    for x in samples {
        counts[spec.nearest_mode(x)] += 1;
    }
    let occupancy: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let max_err = occupancy.iter().zip(spec.weights()).map(|(o, w)| (o - w).abs()).fold(0.0, f64::max);
    let ks_valid = thinned.len() >= MIN_EFFECTIVE_SAMPLES;
    let passed = ks_valid && ks.iter().all(|r| r.p_value >= KS_LEVEL) && max_err <= OCCUPANCY_TOLERANCE;
    Ok(MarginalFit {
        samples: n,
        autocorrelation_times: taus,
        thinning,
        effective_samples: thinned.len(),
        ks,
        occupancy,
        weights: spec.weights().to_vec(),
        max_occupancy_error: max_err,
        ks_valid,
        passed,
    })
}

/// [`fit_cold_samples`] on the trace records at `level`, which must be the
/// coldest level (`β = 1`).
pub fn marginal_fit(trace: &[TraceRecord], spec: &MixtureSpec, ladder: &Ladder, level: usize) -> Result<MarginalFit> {
    if level + 1 != ladder.num_levels() {
        return Err(Error::Unsupported(format!(
            "only the coldest level {} has an analytic law, got level {level}",
            ladder.num_levels() - 1
        )));
    }
    let samples: Vec<Vec<f64>> = trace.iter().filter(|r| r.level == level).map(|r| r.x.clone()).collect();
    fit_cold_samples(&samples, spec)
}

/// Hellinger floor for a level-1 label entry: `(w_{j'}/2)·H(π_{1,j}, π_{1,j'})²`.
pub fn label_entry_floor(spec: &MixtureSpec, ladder: &Ladder, j: usize, jp: usize) -> Result<f64> {
    let b = ladder.beta(0);
    let h = quadratic_hellinger(spec.local(), b, b, &spec.modes()[j], &spec.modes()[jp])?;
    Ok(0.5 * spec.weights()[jp] * h * h)
}
