//! Mixture targets `π*(x) ∝ Σ_j w_j exp(-f(x - μ_j))` built from a strongly
//! convex local potential `f` with `f(0) = 0`, `∇f(0) = 0`.
//!
//! Everything here works in log-space: the mixture potential `U`, its
//! gradient, the tempered component densities `π_{i,j}` and the label
//! conditionals are all max-shift stabilized, so separations like
//! `exp(-800)` between components never overflow or produce `log(0)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ladder::Ladder;
use crate::logspace::{log_sum_exp, norm, softmax};
use crate::rng::standard_normal;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Local potential shared by every mixture component.
///
/// The quadratic kinds carry closed-form normalizers and exact samplers; the
/// `SoftAbs` kind `f(x) = m‖x‖²/2 + (L-m) Σ_k (√(1+x_k²) - 1)` is a
/// non-quadratic potential with curvature in `[m, L]` on every axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalPotential {
    /// `‖x‖²/2`, so `L = m = 1`.
    Isotropic,
    /// `Σ_k a_k x_k²/2` with `m = min a`, `L = max a`.
    Diagonal { curvatures: Vec<f64> },
    SoftAbs { m: f64, l: f64 },
}

impl LocalPotential {
    pub fn name(&self) -> &'static str {
        match self {
            LocalPotential::Isotropic => "isotropic",
            LocalPotential::Diagonal { .. } => "diagonal",
            LocalPotential::SoftAbs { .. } => "soft_abs",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LocalPotential::Isotropic => Ok(()),
            LocalPotential::Diagonal { curvatures } => {
                if curvatures.is_empty() {
                    return Err(Error::InvalidSpec("diagonal potential needs curvatures".into()));
                }
                if curvatures.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
                    return Err(Error::InvalidSpec("curvatures must be finite and positive".into()));
                }
                Ok(())
            }
            LocalPotential::SoftAbs { m, l } => {
                if !(m.is_finite() && l.is_finite() && *m > 0.0 && m <= l) {
                    return Err(Error::InvalidSpec(format!(
                        "soft_abs needs 0 < m <= L, got m={m}, L={l}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Dimension fixed by the potential itself, if any.
    pub fn fixed_dim(&self) -> Option<usize> {
        match self {
            LocalPotential::Diagonal { curvatures } => Some(curvatures.len()),
            _ => None,
        }
    }

    pub fn smoothness(&self) -> f64 {
        match self {
            LocalPotential::Isotropic => 1.0,
            LocalPotential::Diagonal { curvatures } => curvatures.iter().copied().fold(0.0, f64::max),
            LocalPotential::SoftAbs { l, .. } => *l,
        }
    }

    pub fn convexity(&self) -> f64 {
        match self {
            LocalPotential::Isotropic => 1.0,
            LocalPotential::Diagonal { curvatures } => {
                curvatures.iter().copied().fold(f64::INFINITY, f64::min)
            }
            LocalPotential::SoftAbs { m, .. } => *m,
        }
    }

    pub fn kappa(&self) -> f64 {
        self.smoothness() / self.convexity()
    }

    pub fn is_quadratic(&self) -> bool {
        !matches!(self, LocalPotential::SoftAbs { .. })
    }

    /// Curvature along axis `k` for the quadratic kinds.
    pub fn curvature(&self, k: usize) -> Option<f64> {
        match self {
            LocalPotential::Isotropic => Some(1.0),
            LocalPotential::Diagonal { curvatures } => curvatures.get(k).copied(),
            LocalPotential::SoftAbs { .. } => None,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            LocalPotential::Isotropic => 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            LocalPotential::Diagonal { curvatures } => {
                0.5 * x.iter().zip(curvatures).map(|(v, a)| a * v * v).sum::<f64>()
            }
            LocalPotential::SoftAbs { m, l } => x
                .iter()
                .map(|&v| 0.5 * m * v * v + (l - m) * ((1.0 + v * v).sqrt() - 1.0))
                .sum(),
        }
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            LocalPotential::Isotropic => out.copy_from_slice(x),
            LocalPotential::Diagonal { curvatures } => {
                for ((o, v), a) in out.iter_mut().zip(x).zip(curvatures) {
                    *o = a * v;
                }
            }
            LocalPotential::SoftAbs { m, l } => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = m * v + (l - m) * v / (1.0 + v * v).sqrt();
                }
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.gradient_into(x, &mut g);
        g
    }

    /// `log C(β) = log ∫ exp(-β f(x)) dx` when it has a closed form.
    pub fn log_normalizer(&self, beta: f64, dim: usize) -> Option<f64> {
        match self {
            LocalPotential::Isotropic => Some(0.5 * dim as f64 * (LN_2PI - beta.ln())),
            LocalPotential::Diagonal { curvatures } => Some(
                curvatures
                    .iter()
                    .map(|a| 0.5 * (LN_2PI - (beta * a).ln()))
                    .sum(),
            ),
            LocalPotential::SoftAbs { .. } => None,
        }
    }

    /// Exact draw from the density `∝ exp(-β f(x - center))`. Quadratic kinds
    /// are Gaussian; `SoftAbs` uses rejection from `N(center, 1/(βm))`, which
    /// is valid because `f(x) ≥ m‖x‖²/2`.
    pub fn sample<R: Rng + ?Sized>(&self, beta: f64, center: &[f64], rng: &mut R) -> Vec<f64> {
        let d = center.len();
        match self {
            LocalPotential::Isotropic | LocalPotential::Diagonal { .. } => {
                let z = standard_normal(rng, d);
                (0..d)
                    .map(|k| {
                        let a = self.curvature(k).unwrap_or(1.0);
                        center[k] + z[k] / (beta * a).sqrt()
                    })
                    .collect()
            }
            LocalPotential::SoftAbs { m, l } => loop {
                let z = standard_normal(rng, d);
                let y: Vec<f64> = z.iter().map(|v| v / (beta * m).sqrt()).collect();
                let excess: f64 = y.iter().map(|&v| (l - m) * ((1.0 + v * v).sqrt() - 1.0)).sum();
                if rng.random::<f64>() < (-beta * excess).exp() {
                    return y.iter().zip(center).map(|(v, c)| v + c).collect();
                }
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct MixtureSpecRaw {
    weights: Vec<f64>,
    modes: Vec<Vec<f64>>,
    local: LocalPotential,
}

/// Weights, modes, and local potential of a mixture target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureSpecRaw", into = "MixtureSpecRaw")]
pub struct MixtureSpec {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    modes: Vec<Vec<f64>>,
    local: LocalPotential,
    max_mode_norm: f64,
    min_weight: f64,
}

impl TryFrom<MixtureSpecRaw> for MixtureSpec {
    type Error = Error;
    fn try_from(raw: MixtureSpecRaw) -> Result<Self> {
        MixtureSpec::new(raw.weights, raw.modes, raw.local)
    }
}

impl From<MixtureSpec> for MixtureSpecRaw {
    fn from(spec: MixtureSpec) -> Self {
        MixtureSpecRaw { weights: spec.weights, modes: spec.modes, local: spec.local }
    }
}

impl MixtureSpec {
    pub fn new(weights: Vec<f64>, modes: Vec<Vec<f64>>, local: LocalPotential) -> Result<Self> {
        local.validate()?;
        if weights.is_empty() || weights.len() != modes.len() {
            return Err(Error::InvalidSpec(format!(
                "need one weight per mode, got {} weights and {} modes",
                weights.len(),
                modes.len()
            )));
        }
        if weights.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(Error::InvalidSpec("weights must be strictly positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSpec(format!("weights sum to {total}, not 1")));
        }
        let d = modes[0].len();
        if d == 0 {
            return Err(Error::InvalidSpec("modes must have positive dimension".into()));
        }
        if let Some(mode) = modes.iter().find(|m| m.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: mode.len() });
        }
        if modes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("mode coordinates must be finite".into()));
        }
        if let Some(fd) = local.fixed_dim() {
            if fd != d {
                return Err(Error::DimensionMismatch { expected: fd, got: d });
            }
        }
        let max_mode_norm = modes.iter().map(|m| norm(m)).fold(0.0, f64::max);
        let min_weight = weights.iter().copied().fold(f64::INFINITY, f64::min);
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(MixtureSpec { weights, log_weights, modes, local, max_mode_norm, min_weight })
    }

    /// Equal-weight two-component target with modes `±(distance, 0, …, 0)`.
    pub fn symmetric_pair(dim: usize, distance: f64, local: LocalPotential) -> Result<Self> {
        let mut mu = vec![0.0; dim];
        if dim > 0 {
            mu[0] = distance;
        }
        let neg: Vec<f64> = mu.iter().map(|v| -v).collect();
        MixtureSpec::new(vec![0.5, 0.5], vec![mu, neg], local)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn modes(&self) -> &[Vec<f64>] {
        &self.modes
    }

    pub fn local(&self) -> &LocalPotential {
        &self.local
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.modes[0].len()
    }

    /// `D = max_j ‖μ_j‖`.
    pub fn max_mode_norm(&self) -> f64 {
        self.max_mode_norm
    }

    pub fn min_weight(&self) -> f64 {
        self.min_weight
    }

    pub(crate) fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "input point", component: None });
        }
        Ok(())
    }

    /// `f(x - μ_j)`.
    pub fn component_potential(&self, j: usize, x: &[f64]) -> f64 {
        let shifted: Vec<f64> = x.iter().zip(&self.modes[j]).map(|(a, b)| a - b).collect();
        self.local.value(&shifted)
    }

    /// Index of the mode closest to `x` in Euclidean distance.
    pub fn nearest_mode(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (j, mu) in self.modes.iter().enumerate() {
            let d2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.1 {
                best = (j, d2);
            }
        }
        best.0
    }

    fn component_exponents(&self, beta: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.num_components());
        for j in 0..self.num_components() {
            let f = self.component_potential(j, x);
            if !f.is_finite() {
                return Err(Error::NonFinite { what: "local potential", component: Some(j) });
            }
            out.push(self.log_weights[j] - beta * f);
        }
        Ok(out)
    }
}

/// `U(x) = -log Σ_j w_j exp(-f(x - μ_j))`.
pub fn mixture_potential(spec: &MixtureSpec, x: &[f64]) -> Result<f64> {
    spec.check_point(x)?;
    let a = spec.component_exponents(1.0, x)?;
    Ok(-log_sum_exp(&a))
}

/// `∇U(x) = Σ_j ω(x, j) ∇f(x - μ_j)` with `ω(x, ·)` the softmax of
/// `log w_j - f(x - μ_j)`.
pub fn mixture_gradient(spec: &MixtureSpec, x: &[f64]) -> Result<Vec<f64>> {
    Ok(potential_and_gradient(spec, x)?.1)
}

/// `U(x)` and `∇U(x)` from one pass over the components.
pub fn potential_and_gradient(spec: &MixtureSpec, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    spec.check_point(x)?;
    let a = spec.component_exponents(1.0, x)?;
    let lse = log_sum_exp(&a);
    let d = spec.dim();
    let mut grad = vec![0.0; d];
    let mut shifted = vec![0.0; d];
    let mut gj = vec![0.0; d];
    for (j, aj) in a.iter().enumerate() {
        let omega = (aj - lse).exp();
        if omega == 0.0 {
            continue;
        }
        for k in 0..d {
            shifted[k] = x[k] - spec.modes[j][k];
        }
        spec.local.gradient_into(&shifted, &mut gj);
        for k in 0..d {
            grad[k] += omega * gj[k];
        }
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "mixture gradient", component: None });
    }
    Ok((-lse, grad))
}

/// Log of a tempered component density, flagged with whether the analytic
/// normalizer was applied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogDensity {
    pub value: f64,
    pub normalized: bool,
}

/// `log π_{i,j}(x) = -β_i f(x - μ_j) - log C_i`, or the unnormalized
/// `-β_i f(x - μ_j)` when `normalized` is false. Level and label are 0-based.
pub fn component_log_density(
    spec: &MixtureSpec,
    ladder: &Ladder,
    level: usize,
    label: usize,
    x: &[f64],
    normalized: bool,
) -> Result<LogDensity> {
    let beta = ladder.beta_checked(level)?;
    check_label(spec, label)?;
    spec.check_point(x)?;
    let f = spec.component_potential(label, x);
    if !f.is_finite() {
        return Err(Error::NonFinite { what: "local potential", component: Some(label) });
    }
    if !normalized {
        return Ok(LogDensity { value: -beta * f, normalized: false });
    }
    let log_c = spec
        .local
        .log_normalizer(beta, spec.dim())
        .ok_or(Error::UnsupportedNormalizer(spec.local.name()))?;
    Ok(LogDensity { value: -beta * f - log_c, normalized: true })
}

/// `π_{i,x}(j) ∝ w_j exp(-β_i f(x - μ_j))`.
pub fn conditional_label_weights(
    spec: &MixtureSpec,
    ladder: &Ladder,
    level: usize,
    x: &[f64],
) -> Result<Vec<f64>> {
    let beta = ladder.beta_checked(level)?;
    spec.check_point(x)?;
    label_weights_at(spec, beta, x)
}

pub(crate) fn label_weights_at(spec: &MixtureSpec, beta: f64, x: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&spec.component_exponents(beta, x)?))
}

/// `log Σ_j w_j exp(-β f(x - μ_j))`, the unnormalized log of the level-`β`
/// mixture `π_i` up to `log C_i`.
pub(crate) fn log_mixture_unnormalized(spec: &MixtureSpec, beta: f64, x: &[f64]) -> Result<f64> {
    Ok(log_sum_exp(&spec.component_exponents(beta, x)?))
}

fn check_label(spec: &MixtureSpec, label: usize) -> Result<()> {
    if label >= spec.num_components() {
        return Err(Error::IndexOutOfRange {
            what: "labels",
            index: label,
            len: spec.num_components(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate;

    fn pair(d: usize, dist: f64) -> MixtureSpec {
        MixtureSpec::symmetric_pair(d, dist, LocalPotential::Isotropic).unwrap()
    }

    #[test]
    fn single_component_potential_vanishes_at_mode() {
        let spec = MixtureSpec::new(vec![1.0], vec![vec![0.0, 0.0]], LocalPotential::Isotropic).unwrap();
        assert_eq!(mixture_potential(&spec, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_pair_potential_at_origin() {
        let spec = pair(3, 1.0);
        let u = mixture_potential(&spec, &[0.0; 3]).unwrap();
        assert!((u - 0.5).abs() < 1e-15);
    }

    #[test]
    fn far_separated_modes_do_not_overflow() {
        // ‖μ1 - μ2‖ = 40, so the second term is exp(-800).
        let spec = pair(2, 20.0);
        let mu1 = spec.modes()[0].clone();
        let u = mixture_potential(&spec, &mu1).unwrap();
        let reference = 2f64.ln() - (-800f64).exp().ln_1p();
        assert!((u - reference).abs() < 1e-12);

        // All terms underflow individually here; a naive sum would give -log 0.
        let far = vec![120.0, 0.0];
        let u = mixture_potential(&spec, &far).unwrap();
        let f1 = 0.5 * 100.0f64 * 100.0;
        let f2 = 0.5 * 140.0f64 * 140.0;
        let reference = f1 - (0.5f64.ln() + (0.5 * (-(f2 - f1)).exp()).ln_1p() - 0.5f64.ln() + 0.5f64.ln());
        assert!(u.is_finite());
        assert!((u - reference).abs() < 1e-9);
    }

    #[test]
    fn single_component_gradient_is_local_gradient() {
        let local = LocalPotential::Diagonal { curvatures: vec![2.0, 0.5] };
        let spec = MixtureSpec::new(vec![1.0], vec![vec![1.0, -1.0]], local.clone()).unwrap();
        let x = [0.3, 0.7];
        let g = mixture_gradient(&spec, &x).unwrap();
        assert_eq!(g, local.gradient(&[-0.7, 1.7]));
    }

    #[test]
    fn symmetric_pair_gradient_vanishes_at_origin() {
        let g = mixture_gradient(&pair(4, 1.5), &[0.0; 4]).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn dimension_and_finiteness_are_checked() {
        let spec = pair(2, 1.0);
        assert!(matches!(mixture_potential(&spec, &[0.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(
            mixture_potential(&spec, &[f64::NAN, 0.0]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn spec_validation() {
        let l = LocalPotential::Isotropic;
        assert!(MixtureSpec::new(vec![0.5, 0.6], vec![vec![0.0], vec![1.0]], l.clone()).is_err());
        assert!(MixtureSpec::new(vec![1.0, 0.0], vec![vec![0.0], vec![1.0]], l.clone()).is_err());
        assert!(MixtureSpec::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0, 2.0]], l).is_err());
        let spec = MixtureSpec::new(
            vec![0.2, 0.3, 0.5],
            vec![vec![3.0, 4.0], vec![0.0, 1.0], vec![-1.0, 0.0]],
            LocalPotential::Isotropic,
        )
        .unwrap();
        assert_eq!(spec.max_mode_norm(), 5.0);
        assert_eq!(spec.min_weight(), 0.2);
    }

    #[test]
    fn standard_gaussian_mode_height() {
        let spec = MixtureSpec::new(vec![1.0], vec![vec![0.0; 3]], LocalPotential::Isotropic).unwrap();
        let ladder = Ladder::from_betas(vec![1.0]).unwrap();
        let v = component_log_density(&spec, &ladder, 0, 0, &[0.0; 3], true).unwrap();
        assert!((v.value + 1.5 * LN_2PI).abs() < 1e-14);
        assert!(v.normalized);
    }

    #[test]
    fn unnormalized_density_is_zero_at_mode() {
        let spec = MixtureSpec::new(
            vec![0.5, 0.5],
            vec![vec![1.0, 2.0], vec![-3.0, 0.5]],
            LocalPotential::SoftAbs { m: 0.5, l: 2.0 },
        )
        .unwrap();
        let ladder = Ladder::from_betas(vec![0.3, 1.0]).unwrap();
        let v = component_log_density(&spec, &ladder, 0, 1, &[-3.0, 0.5], false).unwrap();
        assert_eq!(v.value, 0.0);
        assert!(!v.normalized);
        assert!(matches!(
            component_log_density(&spec, &ladder, 0, 1, &[-3.0, 0.5], true),
            Err(Error::UnsupportedNormalizer(_))
        ));
    }

    #[test]
    fn normalizer_matches_two_dimensional_quadrature() {
        let local = LocalPotential::Diagonal { curvatures: vec![1.0, 1.0] };
        let spec = MixtureSpec::new(vec![1.0], vec![vec![0.5, -0.25]], local.clone()).unwrap();
        let ladder = Ladder::from_betas(vec![0.5, 1.0]).unwrap();
        let beta = 0.5;
        // Oracle: ∫∫ exp(-β f(x)) over a box wide enough for β = 0.5.
        let inner = |y: f64| {
            integrate(|x| (-beta * local.value(&[x, y])).exp(), -60.0, 60.0, 1e-13, 0.0)
                .unwrap()
                .value
        };
        let c = integrate(inner, -60.0, 60.0, 1e-12, 0.0).unwrap().value;
        let x = [1.5, -0.25];
        let expected = -beta * 0.5 - c.ln();
        let got = component_log_density(&spec, &ladder, 0, 0, &x, true).unwrap();
        assert!((got.value - expected).abs() < 1e-8, "{} vs {}", got.value, expected);
    }

    #[test]
    fn label_weights_limits() {
        let single = MixtureSpec::new(vec![1.0], vec![vec![2.0]], LocalPotential::Isotropic).unwrap();
        let ladder = Ladder::from_betas(vec![1.0]).unwrap();
        assert_eq!(conditional_label_weights(&single, &ladder, 0, &[0.0]).unwrap(), vec![1.0]);

        let p = conditional_label_weights(&pair(2, 3.0), &ladder, 0, &[0.0, 0.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);

        let spec = MixtureSpec::new(
            vec![0.2, 0.3, 0.5],
            vec![vec![3.0, 4.0], vec![0.0, 1.0], vec![-1.0, 0.0]],
            LocalPotential::Isotropic,
        )
        .unwrap();
        let hot = Ladder::from_betas(vec![1e-8, 1.0]).unwrap();
        let p = conditional_label_weights(&spec, &hot, 0, &[1.0, -2.0]).unwrap();
        for (pj, wj) in p.iter().zip(spec.weights()) {
            assert!((pj - wj).abs() < 1e-6);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn soft_abs_curvature_is_bracketed() {
        let local = LocalPotential::SoftAbs { m: 0.5, l: 3.0 };
        assert_eq!(local.value(&[0.0, 0.0]), 0.0);
        assert_eq!(local.gradient(&[0.0, 0.0]), vec![0.0, 0.0]);
        for &v in &[-5.0, -0.3, 0.0, 0.2, 4.0] {
            let h = 1e-4;
            let second = (local.value(&[v + h]) - 2.0 * local.value(&[v]) + local.value(&[v - h])) / (h * h);
            assert!((0.5 - 1e-5..=3.0 + 1e-5).contains(&second));
        }
    }
}
