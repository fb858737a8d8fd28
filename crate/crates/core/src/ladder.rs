//! Inverse-temperature ladders and the closed-form design quantities that
//! go with them: overlap floor/ceiling, step sizes, `τ`, `R`, the `F`
//! overlap function, and exact Gaussian Hellinger/KL values.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::{dist, pairwise_mean, softmax};
use crate::quad::{gauss_legendre, integrate};
use crate::targets::{LocalPotential, MixtureSpec};

/// Increasing inverse temperatures `β_1 < … < β_T = 1` with pseudo-log-weights
/// `ζ_i`. Levels are 0-based in code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    betas: Vec<f64>,
    log_weights: Vec<f64>,
    /// Declared geometric ratio, if the ladder was built geometrically.
    ratio: Option<f64>,
    /// Levels prepended to satisfy `β_1 ≤ 1/(4LD²)`.
    extended: usize,
}

impl Ladder {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        let t = betas.len();
        Self::with_log_weights(betas, vec![0.0; t])
    }

    pub fn with_log_weights(betas: Vec<f64>, log_weights: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidLadder("ladder needs at least one level".into()));
        }
        if *betas.last().unwrap() != 1.0 {
            return Err(Error::InvalidLadder("last inverse temperature must be exactly 1".into()));
        }
        if betas.iter().any(|&b| !(b.is_finite() && b > 0.0)) {
            return Err(Error::InvalidLadder("inverse temperatures must lie in (0, 1]".into()));
        }
        if betas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidLadder("inverse temperatures must strictly increase".into()));
        }
        if log_weights.len() != betas.len() {
            return Err(Error::DimensionMismatch { expected: betas.len(), got: log_weights.len() });
        }
        if log_weights.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidLadder("pseudo-log-weights must be finite".into()));
        }
        Ok(Ladder { betas, log_weights, ratio: None, extended: 0 })
    }

    /// `β_i = ratio^{i-T}` for `i = 1..T`.
    pub fn geometric(ratio: f64, levels: usize) -> Result<Self> {
        if !(ratio.is_finite() && ratio > 1.0) && levels > 1 {
            return Err(Error::InvalidLadder(format!("geometric ratio must exceed 1, got {ratio}")));
        }
        if levels == 0 {
            return Err(Error::InvalidLadder("ladder needs at least one level".into()));
        }
        let betas: Vec<f64> = (0..levels)
            .map(|i| {
                if i + 1 == levels {
                    1.0
                } else {
                    ratio.powi(i as i32 + 1 - levels as i32)
                }
            })
            .collect();
        let mut ladder = Self::from_betas(betas)?;
        ladder.ratio = (levels > 1).then_some(ratio);
        Ok(ladder)
    }

    pub fn num_levels(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn beta(&self, level: usize) -> f64 {
        self.betas[level]
    }

    pub fn beta_checked(&self, level: usize) -> Result<f64> {
        self.betas.get(level).copied().ok_or(Error::IndexOutOfRange {
            what: "levels",
            index: level,
            len: self.betas.len(),
        })
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn set_log_weights(&mut self, log_weights: Vec<f64>) -> Result<()> {
        if log_weights.len() != self.betas.len() {
            return Err(Error::DimensionMismatch { expected: self.betas.len(), got: log_weights.len() });
        }
        if log_weights.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidLadder("pseudo-log-weights must be finite".into()));
        }
        self.log_weights = log_weights;
        Ok(())
    }

    pub fn declared_ratio(&self) -> Option<f64> {
        self.ratio
    }

    pub fn extended_levels(&self) -> usize {
        self.extended
    }

    /// Largest consecutive ratio `β_{i+1}/β_i`, or 1 for a single level.
    pub fn max_ratio(&self) -> f64 {
        self.betas.windows(2).map(|w| w[1] / w[0]).fold(1.0, f64::max)
    }

    /// `r_i ∝ e^{ζ_i}`, normalized.
    pub fn level_weights(&self) -> Vec<f64> {
        softmax(&self.log_weights)
    }

    /// The hottest `k` levels with their pseudo-weights. The coldest of them
    /// is generally below 1, so this is only used to run prefix chains.
    pub(crate) fn prefix(&self, k: usize) -> Ladder {
        let k = k.clamp(1, self.betas.len());
        Ladder {
            betas: self.betas[..k].to_vec(),
            log_weights: self.log_weights[..k].to_vec(),
            ratio: self.ratio,
            extended: 0,
        }
    }
}

/// `T = ⌈(κ√d + 1)·ln(4LD² + 1)⌉` levels at ratio `1 + 1/(κ√d)`, extended at
/// the hot end until `β_1 ≤ 1/(4LD²)`.
pub fn build_ladder(l: f64, m: f64, d: usize, big_d: f64) -> Result<Ladder> {
    if !(m > 0.0 && l >= m && l.is_finite()) {
        return Err(Error::InvalidArgument(format!("need L >= m > 0, got L={l}, m={m}")));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    if !(big_d >= 0.0 && big_d.is_finite()) {
        return Err(Error::InvalidArgument(format!("D must be nonnegative, got {big_d}")));
    }
    let spread = 4.0 * l * big_d * big_d;
    if spread == 0.0 {
        return Ladder::from_betas(vec![1.0]);
    }
    let kappa_sqrt_d = (l / m) * (d as f64).sqrt();
    let ratio = 1.0 + 1.0 / kappa_sqrt_d;
    let mut levels = ((kappa_sqrt_d + 1.0) * spread.ln_1p()).ceil().max(1.0) as usize;
    let beta_max = 1.0 / spread;
    let mut extended = 0;
    while ratio.powi(1 - levels as i32) > beta_max {
        levels += 1;
        extended += 1;
    }
    let mut ladder = Ladder::geometric(ratio, levels)?;
    ladder.extended = extended;
    Ok(ladder)
}

/// Closed-form bounds on component overlap for a ladder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapDiagnostics {
    /// `e^{-β_1 L D²/2}`, a lower bound on the hot-level Hellinger affinity.
    pub hellinger_floor: f64,
    /// `(dκ²/4)(max ratio - 1)²`, an upper bound on half the adjacent KL.
    pub kl_ceiling: f64,
    /// `min{1 - √kl_ceiling, hellinger_floor²}`.
    pub overlap_margin: f64,
    /// The constant 3/4 claimed for ladders meeting the spacing conditions.
    pub nominal_margin: f64,
}

pub const NOMINAL_OVERLAP_MARGIN: f64 = 0.75;

pub fn overlap_diagnostics(spec: &MixtureSpec, ladder: &Ladder) -> OverlapDiagnostics {
    let l = spec.local().smoothness();
    let big_d = spec.max_mode_norm();
    let hellinger_floor = (-ladder.beta(0) * l * big_d * big_d / 2.0).exp();
    let kappa = spec.local().kappa();
    let spacing = ladder.max_ratio() - 1.0;
    let kl_ceiling = spec.dim() as f64 * kappa * kappa / 4.0 * spacing * spacing;
    OverlapDiagnostics {
        hellinger_floor,
        kl_ceiling,
        overlap_margin: (1.0 - kl_ceiling.sqrt()).min(hellinger_floor * hellinger_floor),
        nominal_margin: NOMINAL_OVERLAP_MARGIN,
    }
}

/// Inputs for the step-size formulas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizeParams {
    pub alpha: f64,
    pub q_adj: f64,
    /// Warm-start constant `η ≥ 1`.
    pub eta: f64,
    /// Target TV accuracy `ε > 0`.
    pub epsilon: f64,
    /// MALA constant `c ∈ (0, 0.01]`.
    pub c: f64,
}

impl Default for StepSizeParams {
    fn default() -> Self {
        StepSizeParams { alpha: 0.5, q_adj: 0.5, eta: std::f64::consts::E, epsilon: 0.01, c: 0.01 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub rwm_h: f64,
    pub mala_h: f64,
    pub tau: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub r_min: f64,
    pub r_tilde: f64,
}

pub(crate) fn check_swap_params(alpha: f64, q_adj: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(q_adj > 0.0 && q_adj <= 0.5) {
        return Err(Error::InvalidArgument(format!("q_adj must lie in (0, 1/2], got {q_adj}")));
    }
    Ok(())
}

/// `r_min` and `r̃ = min_{i,i'} r_{i'}/r_i` from the ladder's pseudo-weights.
pub fn level_weight_summary(ladder: &Ladder) -> (f64, f64) {
    let r = ladder.level_weights();
    let r_min = r.iter().copied().fold(f64::INFINITY, f64::min);
    let r_max = r.iter().copied().fold(0.0, f64::max);
    (r_min, r_min / r_max)
}

/// RWM `h = 1/(Ld)`, MALA `h = c/(L²(D+R)²d)`, `τ = α(1-α)q_adj r̃`, and
/// `R = (2/√m)·max{√d, √(2 ln(86Tη/(τ r_min w_min ε)))}`.
pub fn step_sizes(spec: &MixtureSpec, ladder: &Ladder, params: &StepSizeParams) -> Result<StepSizes> {
    check_swap_params(params.alpha, params.q_adj)?;
    if !(params.epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", params.epsilon)));
    }
    if !(params.eta >= 1.0) {
        return Err(Error::InvalidArgument(format!("eta must be at least 1, got {}", params.eta)));
    }
    if !(params.c > 0.0 && params.c <= 0.01) {
        return Err(Error::InvalidArgument(format!("c must lie in (0, 0.01], got {}", params.c)));
    }
    let l = spec.local().smoothness();
    let m = spec.local().convexity();
    let d = spec.dim() as f64;
    let t = ladder.num_levels() as f64;
    let (r_min, r_tilde) = level_weight_summary(ladder);
    let tau = params.alpha * (1.0 - params.alpha) * params.q_adj * r_tilde;
    let log_term =
        (86.0 * t * params.eta / (tau * r_min * spec.min_weight() * params.epsilon)).ln();
    let r = 2.0 / m.sqrt() * d.sqrt().max((2.0 * log_term).max(0.0).sqrt());
    let big_d = spec.max_mode_norm();
    Ok(StepSizes {
        rwm_h: 1.0 / (l * d),
        mala_h: params.c / (l * l * (big_d + r).powi(2) * d),
        tau,
        r,
        r_min,
        r_tilde,
    })
}

/// `F(ρ) = (2√(1+ρ)/(2+ρ))^{d/2}`.
pub fn f_overlap(rho: f64, d: usize) -> Result<f64> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::InvalidArgument(format!("rho must be nonnegative, got {rho}")));
    }
    let base = 2.0 * (1.0 + rho).sqrt() / (2.0 + rho);
    // ln keeps large d from underflowing before the power is taken.
    Ok((0.5 * d as f64 * base.ln()).exp().min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianOverlap {
    pub hellinger: f64,
    pub kl: f64,
}

/// Hellinger affinity and `KL(N(μ, β⁻¹I) ‖ N(μ', β'⁻¹I))`.
///
/// The KL uses the integral `∫_β^{β'} (β' - z)·d/(2z²) dz` for the temperature
/// part and adds `β'‖μ - μ'‖²/2` for the mean shift.
pub fn gaussian_closed_forms(
    beta: f64,
    beta_prime: f64,
    mu: &[f64],
    mu_prime: &[f64],
    d: usize,
) -> Result<GaussianOverlap> {
    if !(beta > 0.0 && beta_prime > 0.0) {
        return Err(Error::InvalidArgument("inverse temperatures must be positive".into()));
    }
    if mu.len() != mu_prime.len() {
        return Err(Error::DimensionMismatch { expected: mu.len(), got: mu_prime.len() });
    }
    let sep2 = dist(mu, mu_prime).powi(2);
    let hellinger = gaussian_hellinger(beta, beta_prime, sep2, d);
    let kl = tempering_kl(|z| d as f64 / (2.0 * z * z), beta, beta_prime)? + beta_prime * sep2 / 2.0;
    Ok(GaussianOverlap { hellinger, kl: kl.max(0.0) })
}

fn gaussian_hellinger(beta: f64, beta_prime: f64, sep2: f64, d: usize) -> f64 {
    let s = beta + beta_prime;
    let log_scale = 0.5 * d as f64 * (2.0 * (beta * beta_prime).sqrt() / s).ln();
    (log_scale - beta * beta_prime * sep2 / (4.0 * s)).exp().min(1.0)
}

/// Hellinger affinity between `∝ e^{-β f(x-μ)}` and `∝ e^{-β' f(x-μ')}` for
/// the quadratic potentials, axis by axis.
pub fn quadratic_hellinger(
    local: &LocalPotential,
    beta: f64,
    beta_prime: f64,
    mu: &[f64],
    mu_prime: &[f64],
) -> Result<f64> {
    if !local.is_quadratic() {
        return Err(Error::UnsupportedNormalizer(local.name()));
    }
    let s = beta + beta_prime;
    let mut log_h = 0.0;
    for (k, (a, b)) in mu.iter().zip(mu_prime).enumerate() {
        let c = local.curvature(k).ok_or(Error::DimensionMismatch { expected: k + 1, got: k })?;
        log_h += 0.5 * (2.0 * (beta * beta_prime).sqrt() / s).ln()
            - beta * beta_prime * c * (a - b) * (a - b) / (4.0 * s);
    }
    Ok(log_h.exp().min(1.0))
}

/// `∫_β^{β'} (β' - z)·v(z) dz` with `v(z) = Var_{π_z}(f)`, which is
/// `KL(π_β ‖ π_{β'})` for a tempered family `π_z ∝ e^{-z f}`.
pub fn tempering_kl<V: FnMut(f64) -> f64>(mut v: V, beta: f64, beta_prime: f64) -> Result<f64> {
    let r = integrate(|z| (beta_prime - z) * v(z), beta, beta_prime, 1e-10, 0.0)?;
    Ok(r.value)
}

/// KL between adjacent tempered component laws, for every `i` in the
/// ladder. Quadratics use `v(z) = d/(2z²)`; other potentials plug in a Monte
/// Carlo variance from `n_mc` exact draws per quadrature node.
pub fn adjacent_kls<R: Rng + ?Sized>(
    local: &LocalPotential,
    d: usize,
    ladder: &Ladder,
    n_mc: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let betas = ladder.betas();
    let mut out = Vec::with_capacity(betas.len().saturating_sub(1));
    for w in betas.windows(2) {
        let kl = if local.is_quadratic() {
            tempering_kl(|z| d as f64 / (2.0 * z * z), w[0], w[1])?
        } else {
            // A noisy integrand defeats adaptive subdivision, so the Monte
            // Carlo path uses a fixed Gauss–Legendre rule on [β_i, β_{i+1}].
            let origin = vec![0.0; d];
            let (nodes, weights) = gauss_legendre(12);
            let (lo, hi) = (w[0], w[1]);
            let half = 0.5 * (hi - lo);
            let mut acc = 0.0;
            for (x, wt) in nodes.iter().zip(&weights) {
                let z = lo + half * (x + 1.0);
                let vals: Vec<f64> =
                    (0..n_mc).map(|_| local.value(&local.sample(z, &origin, rng))).collect();
                let mean = pairwise_mean(&vals);
                let sq: Vec<f64> = vals.iter().map(|v| (v - mean) * (v - mean)).collect();
                let var = pairwise_mean(&sq) * n_mc as f64 / (n_mc as f64 - 1.0).max(1.0);
                acc += wt * (hi - z) * var;
            }
            acc * half
        };
        out.push(kl.max(0.0));
    }
    Ok(out)
}

/// Exact `Δ = ½ max KL` and `H = min_{j,j'} ∫√(π_{1,j}π_{1,j'})` for a
/// quadratic local potential.
pub fn exact_overlap(spec: &MixtureSpec, ladder: &Ladder) -> Result<(f64, f64)> {
    let local = spec.local();
    if !local.is_quadratic() {
        return Err(Error::UnsupportedNormalizer(local.name()));
    }
    let d = spec.dim() as f64;
    let kls = ladder
        .betas()
        .windows(2)
        .map(|w| tempering_kl(|z| d / (2.0 * z * z), w[0], w[1]))
        .collect::<Result<Vec<f64>>>()?;
    let delta = 0.5 * kls.iter().copied().fold(0.0, f64::max);
    let beta1 = ladder.beta(0);
    let mut h = 1.0f64;
    for mu in spec.modes() {
        for nu in spec.modes() {
            h = h.min(quadratic_hellinger(local, beta1, beta1, mu, nu)?);
        }
    }
    Ok((delta, h))
}

/// One ladder's worth of design quantities, serialized as one CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    #[serde(rename = "T")]
    pub t: usize,
    pub beta1: f64,
    pub ratio: f64,
    pub hellinger_floor: f64,
    pub kl_ceiling: f64,
    pub overlap_margin: f64,
    pub rwm_h: f64,
    pub mala_h: f64,
    pub tau: f64,
    #[serde(rename = "R")]
    pub r: f64,
}

impl DesignReport {
    pub fn new(spec: &MixtureSpec, ladder: &Ladder, params: &StepSizeParams) -> Result<Self> {
        let overlap = overlap_diagnostics(spec, ladder);
        let steps = step_sizes(spec, ladder, params)?;
        let report = DesignReport {
            t: ladder.num_levels(),
            beta1: ladder.beta(0),
            ratio: ladder.declared_ratio().unwrap_or_else(|| ladder.max_ratio()),
            hellinger_floor: overlap.hellinger_floor,
            kl_ceiling: overlap.kl_ceiling,
            overlap_margin: overlap.overlap_margin,
            rwm_h: steps.rwm_h,
            mala_h: steps.mala_h,
            tau: steps.tau,
            r: steps.r,
        };
        report.validate()?;
        Ok(report)
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            self.beta1,
            self.ratio,
            self.hellinger_floor,
            self.kl_ceiling,
            self.overlap_margin,
            self.rwm_h,
            self.mala_h,
            self.tau,
            self.r,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "design report", component: None });
        }
        Ok(())
    }
}

/// Writes reports as CSV with header
/// `T,beta1,ratio,hellinger_floor,kl_ceiling,overlap_margin,rwm_h,mala_h,tau,R`.
pub fn write_design_csv<W: Write>(reports: &[DesignReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::LocalPotential;
    use proptest::prelude::*;

    #[test]
    fn ladder_for_unit_constants() {
        let lad = build_ladder(1.0, 1.0, 4, 1.0).unwrap();
        assert_eq!(lad.num_levels(), 5);
        assert_eq!(lad.declared_ratio(), Some(1.5));
        // 1.5^-4 = 16/81
        assert!((lad.beta(0) - 16.0 / 81.0).abs() < 1e-15);
        assert!(lad.beta(0) <= 0.25);
        assert_eq!(lad.extended_levels(), 0);
    }

    #[test]
    fn ladder_meets_hot_level_condition() {
        let lad = build_ladder(4.0, 1.0, 1, 10.0).unwrap();
        assert_eq!(lad.num_levels(), 37);
        assert!(lad.beta(0) <= 1.0 / 1600.0);
        assert!((lad.beta(0) - 1.25f64.powi(-36)).abs() < 1e-18);
    }

    #[test]
    fn zero_separation_gives_single_level() {
        let lad = build_ladder(2.0, 1.0, 3, 0.0).unwrap();
        assert_eq!(lad.betas(), &[1.0]);
    }

    #[test]
    fn ladder_validation() {
        assert!(Ladder::from_betas(vec![0.5, 0.9]).is_err());
        assert!(Ladder::from_betas(vec![0.5, 0.5, 1.0]).is_err());
        assert!(Ladder::from_betas(vec![0.0, 1.0]).is_err());
        assert!(Ladder::from_betas(vec![]).is_err());
    }

    #[test]
    fn overlap_floor_and_ceiling() {
        let spec = MixtureSpec::symmetric_pair(4, 1.0, LocalPotential::Isotropic).unwrap();
        let lad = Ladder::from_betas(vec![0.25, 1.0]).unwrap();
        let o = overlap_diagnostics(&spec, &lad);
        assert!((o.hellinger_floor - (-0.125f64).exp()).abs() < 1e-15);

        let single = Ladder::from_betas(vec![1.0]).unwrap();
        assert_eq!(overlap_diagnostics(&spec, &single).kl_ceiling, 0.0);

        let geo = Ladder::geometric(1.5, 4).unwrap();
        let o = overlap_diagnostics(&spec, &geo);
        assert!((o.kl_ceiling - 0.25).abs() < 1e-12);
        assert_eq!(o.nominal_margin, 0.75);
        assert!((o.overlap_margin - 0.5f64.min(o.hellinger_floor.powi(2))).abs() < 1e-12);
    }

    #[test]
    fn step_size_values() {
        let spec = MixtureSpec::symmetric_pair(4, 1.0, LocalPotential::Isotropic).unwrap();
        let lad = build_ladder(1.0, 1.0, 4, 1.0).unwrap();
        let params = StepSizeParams { alpha: 0.5, q_adj: 0.5, eta: 1.0f64.exp(), epsilon: 0.5, c: 0.01 };
        let s = step_sizes(&spec, &lad, &params).unwrap();
        assert_eq!(s.rwm_h, 0.25);
        assert_eq!(s.tau, 0.125);
        assert_eq!(s.r_tilde, 1.0);

        // Pick ε so that 2 ln(86Tη/(τ r_min w_min ε)) = d - 1 < d.
        let t = lad.num_levels() as f64;
        let target_log: f64 = 1.5;
        let eps = 86.0 * t * params.eta / (0.125 * (1.0 / t) * 0.5 * target_log.exp());
        let s = step_sizes(&spec, &lad, &StepSizeParams { epsilon: eps, ..params }).unwrap();
        assert!((s.r - 4.0).abs() < 1e-12);
        assert!((s.mala_h - 0.01 / (25.0 * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn step_size_argument_errors() {
        let spec = MixtureSpec::symmetric_pair(2, 1.0, LocalPotential::Isotropic).unwrap();
        let lad = Ladder::from_betas(vec![1.0]).unwrap();
        let p = StepSizeParams::default();
        assert!(step_sizes(&spec, &lad, &StepSizeParams { epsilon: 0.0, ..p }).is_err());
        assert!(step_sizes(&spec, &lad, &StepSizeParams { eta: 0.5, ..p }).is_err());
        assert!(step_sizes(&spec, &lad, &StepSizeParams { c: 0.02, ..p }).is_err());
    }

    #[test]
    fn f_overlap_values() {
        assert_eq!(f_overlap(0.0, 7).unwrap(), 1.0);
        let v = f_overlap(0.5, 4).unwrap();
        assert!((v - (2.0 * 1.5f64.sqrt() / 2.5).powi(2)).abs() < 1e-15);
        assert!((v - 0.96).abs() < 1e-12);
        assert!(f_overlap(0.5, 48).unwrap() <= (-0.25f64).exp());
    }

    #[test]
    fn gaussian_identical_laws() {
        let g = gaussian_closed_forms(0.7, 0.7, &[1.0, 2.0], &[1.0, 2.0], 2).unwrap();
        assert!((g.hellinger - 1.0).abs() < 1e-15);
        assert!(g.kl.abs() < 1e-14);
    }

    #[test]
    fn gaussian_hellinger_against_quadrature() {
        // 1-D Hellinger integral; the d-dim affinity factorizes along the
        // separation axis and the orthogonal axes contribute 1 when β = β'.
        let g = gaussian_closed_forms(1.0, 1.0, &[0.0, 0.0, 0.0], &[2.0, 0.0, 0.0], 3).unwrap();
        let phi = |x: f64, m: f64| (-(x - m) * (x - m) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let oracle = integrate(|x| (phi(x, 0.0) * phi(x, 2.0)).sqrt(), -40.0, 40.0, 1e-14, 0.0)
            .unwrap()
            .value;
        assert!((g.hellinger - oracle).abs() < 1e-12);
        assert!((g.hellinger - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_kl_matches_closed_form() {
        let g = gaussian_closed_forms(1.0, 1.5, &[0.0, 0.0], &[0.0, 0.0], 2).unwrap();
        let ratio: f64 = 1.5;
        let oracle = (ratio - 1.0 - ratio.ln()) * 2.0 / 2.0;
        assert!((g.kl - oracle).abs() < 1e-10);
    }

    #[test]
    fn soft_abs_kl_lies_between_curvature_extremes() {
        // Var(f) under e^{-zf} is d/(2z²) for a quadratic and d/z² for a
        // degree-one potential; soft_abs sits between the two.
        use rand::SeedableRng;
        let local = LocalPotential::SoftAbs { m: 1.0, l: 2.0 };
        let lad = Ladder::from_betas(vec![0.5, 1.0]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let kls = adjacent_kls(&local, 1, &lad, 2000, &mut rng).unwrap();
        assert_eq!(kls.len(), 1);
        let quad = tempering_kl(|z| 1.0 / (2.0 * z * z), 0.5, 1.0).unwrap();
        assert!(kls[0] > 0.9 * quad && kls[0] < 2.1 * quad, "{} vs {}", kls[0], quad);
    }

    #[test]
    fn design_csv_header() {
        let spec = MixtureSpec::symmetric_pair(2, 2.0, LocalPotential::Isotropic).unwrap();
        let lad = build_ladder(1.0, 1.0, 2, 2.0).unwrap();
        let rep = DesignReport::new(&spec, &lad, &StepSizeParams::default()).unwrap();
        let mut buf = Vec::new();
        write_design_csv(&[rep], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "T,beta1,ratio,hellinger_floor,kl_ceiling,overlap_margin,rwm_h,mala_h,tau,R\n"
        ));
    }

    proptest! {
        #[test]
        fn built_ladders_satisfy_spacing(l in 1.0f64..8.0, kappa in 1.0f64..4.0, d in 1usize..12, big_d in 0.1f64..12.0) {
            let m = l / kappa;
            let lad = build_ladder(l, m, d, big_d).unwrap();
            prop_assert_eq!(*lad.betas().last().unwrap(), 1.0);
            prop_assert!(lad.beta(0) <= 1.0 / (4.0 * l * big_d * big_d) * (1.0 + 1e-12));
            let bound = 1.0 + 1.0 / (kappa * (d as f64).sqrt());
            for w in lad.betas().windows(2) {
                prop_assert!(w[1] > w[0]);
                prop_assert!((w[1] / w[0] - bound).abs() < 1e-12);
            }
        }

        #[test]
        fn f_overlap_envelope(rho in 0.0f64..0.5, d in 1usize..200) {
            let f = f_overlap(rho, d).unwrap();
            prop_assert!(f <= (-rho * rho * d as f64 / 48.0).exp() + 1e-15);
            prop_assert!(f > 0.0 && f <= 1.0);
            prop_assert!(f_overlap(rho + 0.01, d).unwrap() <= f + 1e-15);
            prop_assert!(f_overlap(rho, d + 1).unwrap() <= f + 1e-15);
        }
    }
}
