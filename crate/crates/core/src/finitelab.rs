//! Exact spectral gaps, s-conductance, and state decompositions of small
//! reversible chains, with randomized verification campaigns.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub const MAX_ENUMERATION_STATES: usize = 22;
const ROW_TOL: f64 = 1e-12;
const REVERSIBILITY_TOL: f64 = 1e-10;
const HALF_MASS_TOL: f64 = 1e-12;
pub const BOUND_SLACK: f64 = 1e-9;
pub const IDENTITY_TOL: f64 = 1e-12;

/// Row-stochastic `P` reversible with respect to a strictly positive `π`.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteChain {
    p: DMatrix<f64>,
    pi: Vec<f64>,
}

impl FiniteChain {
    pub fn new(p: DMatrix<f64>, pi: Vec<f64>) -> Result<Self> {
        let n = pi.len();
        if n == 0 || p.nrows() != n || p.ncols() != n {
            return Err(Error::InvalidChain(format!(
                "matrix is {}x{} but stationary vector has length {n}",
                p.nrows(),
                p.ncols()
            )));
        }
        if p.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::InvalidChain("entries must be finite and nonnegative".into()));
        }
        for (k, row) in p.row_iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidChain(format!("row {k} sums to {s}")));
            }
        }
        if pi.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::InvalidChain("stationary vector must be strictly positive".into()));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > ROW_TOL {
            return Err(Error::InvalidChain(format!("stationary vector sums to {total}")));
        }
        for k in 0..n {
            for l in (k + 1)..n {
                let gap = (pi[k] * p[(k, l)] - pi[l] * p[(l, k)]).abs();
                if gap > REVERSIBILITY_TOL {
                    return Err(Error::InvalidChain(format!(
                        "detailed balance fails at ({k}, {l}) by {gap:e}"
                    )));
                }
            }
        }
        Ok(FiniteChain { p, pi })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, pi: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidChain("transition matrix must be square".into()));
        }
        let p = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(p, pi)
    }

    pub fn n(&self) -> usize {
        self.pi.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.p.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// `(P + I)/2`.
    pub fn lazy(&self) -> FiniteChain {
        let n = self.n();
        let p = (&self.p + DMatrix::identity(n, n)) * 0.5;
        FiniteChain { p, pi: self.pi.clone() }
    }

    pub fn is_lazy(&self) -> bool {
        (0..self.n()).all(|k| self.p[(k, k)] >= 0.5 - ROW_TOL)
    }

    /// Relabels states so that new state `k` is old state `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<FiniteChain> {
        let n = self.n();
        if perm.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: perm.len() });
        }
        let p = DMatrix::from_fn(n, n, |i, j| self.p[(perm[i], perm[j])]);
        let pi = perm.iter().map(|&k| self.pi[k]).collect();
        Ok(FiniteChain { p, pi })
    }

    /// `P(A, A^c) = Σ_{x∈A, y∉A} π_x P_xy` for the subset given by `mask`.
    pub fn flow(&self, mask: u64) -> f64 {
        let n = self.n();
        let mut f = 0.0;
        for x in 0..n {
            if mask >> x & 1 == 1 {
                for y in 0..n {
                    if mask >> y & 1 == 0 {
                        f += self.pi[x] * self.p[(x, y)];
                    }
                }
            }
        }
        f
    }

    pub fn mass(&self, mask: u64) -> f64 {
        (0..self.n()).filter(|&x| mask >> x & 1 == 1).map(|x| self.pi[x]).sum()
    }

    /// Plain-text form: `n`, then `n` rows of `P`, then `π`.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.n());
        for row in self.p.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        let cells: Vec<String> = self.pi.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let n: usize = lines
            .next()
            .ok_or_else(|| Error::InvalidChain("empty chain file".into()))?
            .parse()
            .map_err(|e| Error::InvalidChain(format!("bad state count: {e}")))?;
        let parse_row = |line: Option<&str>, what: &str| -> Result<Vec<f64>> {
            let line = line.ok_or_else(|| Error::InvalidChain(format!("missing {what}")))?;
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::InvalidChain(format!("{what}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != n {
                return Err(Error::InvalidChain(format!("{what} has {} entries, expected {n}", row.len())));
            }
            Ok(row)
        };
        let mut rows = Vec::with_capacity(n);
        for k in 0..n {
            rows.push(parse_row(lines.next(), &format!("row {k}"))?);
        }
        let pi = parse_row(lines.next(), "stationary vector")?;
        Self::from_rows(rows, pi)
    }
}

/// `λ(P) = 1 - λ_2` of the symmetrized matrix `diag(√π) P diag(√π)⁻¹`.
/// A one-state chain has no nonconstant functions; its gap is taken as 1.
pub fn spectral_gap(chain: &FiniteChain) -> f64 {
    let n = chain.n();
    if n == 1 {
        return 1.0;
    }
    let sq: Vec<f64> = chain.pi.iter().map(|v| v.sqrt()).collect();
    let s = DMatrix::from_fn(n, n, |i, j| sq[i] * chain.p[(i, j)] / sq[j]);
    let sym = (&s + s.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    (1.0 - eig[1]).max(0.0)
}

/// `E_P(g) = ½ Σ π_x P_xy (g_y - g_x)²`.
pub fn dirichlet_form(chain: &FiniteChain, g: &[f64]) -> f64 {
    let n = chain.n();
    let mut e = 0.0;
    for x in 0..n {
        for y in 0..n {
            let d = g[y] - g[x];
            e += chain.pi[x] * chain.p[(x, y)] * d * d;
        }
    }
    0.5 * e
}

pub fn variance(pi: &[f64], g: &[f64]) -> f64 {
    let mean: f64 = pi.iter().zip(g).map(|(p, v)| p * v).sum();
    pi.iter().zip(g).map(|(p, v)| p * (v - mean) * (v - mean)).sum()
}

fn check_enumerable(n: usize) -> Result<()> {
    if n > MAX_ENUMERATION_STATES {
        return Err(Error::SizeLimit { n, max: MAX_ENUMERATION_STATES });
    }
    Ok(())
}

fn admissible(mass: f64, s: f64) -> bool {
    mass > s && mass <= 0.5 + HALF_MASS_TOL
}

/// Exact `Φ_s(P)` by Gray-code enumeration of all subsets with incremental
/// flow updates. Returns `+∞` when no subset has mass in `(s, ½]`.
pub fn s_conductance_exact(chain: &FiniteChain, s: f64) -> Result<f64> {
    Ok(s_conductance_argmin(chain, s)?.0)
}

/// `Φ_s(P)` together with a minimizing subset as a bitmask (0 if none).
pub fn s_conductance_argmin(chain: &FiniteChain, s: f64) -> Result<(f64, u64)> {
    let n = chain.n();
    check_enumerable(n)?;
    if !(0.0..0.5).contains(&s) {
        return Err(Error::InvalidArgument(format!("s must lie in [0, 1/2), got {s}")));
    }
    // Symmetric flow matrix F_xy = π_x P_xy and its off-diagonal row sums.
    let f = DMatrix::from_fn(n, n, |i, j| chain.pi[i] * chain.p[(i, j)]);
    let out: Vec<f64> = (0..n).map(|v| (0..n).filter(|&y| y != v).map(|y| f[(v, y)]).sum()).collect();
    let mut mask = 0u64;
    let mut mass = 0.0;
    let mut flow = 0.0;
    let mut best = (f64::INFINITY, 0u64);
    for k in 1u64..(1u64 << n) {
        let v = k.trailing_zeros() as usize;
        let bit = 1u64 << v;
        let inner: f64 = (0..n).filter(|&x| x != v && mask >> x & 1 == 1).map(|x| f[(x, v)]).sum();
        if mask & bit == 0 {
            flow += out[v] - 2.0 * inner;
            mass += chain.pi[v];
        } else {
            flow -= out[v] - 2.0 * inner;
            mass -= chain.pi[v];
        }
        mask ^= bit;
        if admissible(mass, s) {
            let ratio = flow.max(0.0) / (mass - s);
            if ratio < best.0 {
                best = (ratio, mask);
            }
        }
    }
    Ok(best)
}

/// Whether some subset has stationary mass exactly ½ (to 1e-12).
pub fn has_half_mass_set(pi: &[f64]) -> Result<bool> {
    let n = pi.len();
    check_enumerable(n)?;
    let mut mass = 0.0;
    let mut mask = 0u64;
    for k in 1u64..(1u64 << n) {
        let v = k.trailing_zeros() as usize;
        let bit = 1u64 << v;
        if mask & bit == 0 {
            mass += pi[v];
        } else {
            mass -= pi[v];
        }
        mask ^= bit;
        if (mass - 0.5).abs() <= HALF_MASS_TOL {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Block labels `0..n_blocks` for each state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
    n_blocks: usize,
}

impl Partition {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        let n_blocks = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; n_blocks];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!("block {k} is empty")));
        }
        if labels.is_empty() {
            return Err(Error::InvalidPartition("partition of an empty state space".into()));
        }
        Ok(Partition { labels, n_blocks })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut b = vec![Vec::new(); self.n_blocks];
        for (x, &l) in self.labels.iter().enumerate() {
            b[l].push(x);
        }
        b
    }
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub blocks: Vec<Vec<usize>>,
    /// `P_k`: moves inside block `k`, escapes turned into holds.
    pub restricted: Vec<FiniteChain>,
    /// `P̄(k, ℓ) = Σ_{x∈X_k} π_x P(x, X_ℓ) / Π(X_k)`.
    pub projected: FiniteChain,
}

pub fn decompose(chain: &FiniteChain, partition: &Partition) -> Result<Decomposition> {
    if partition.labels.len() != chain.n() {
        return Err(Error::DimensionMismatch { expected: chain.n(), got: partition.labels.len() });
    }
    let blocks = partition.blocks();
    let nb = blocks.len();
    let mut restricted = Vec::with_capacity(nb);
    for block in &blocks {
        let m = block.len();
        let mass: f64 = block.iter().map(|&x| chain.pi[x]).sum();
        let mut p = DMatrix::zeros(m, m);
        for (a, &x) in block.iter().enumerate() {
            let mut stay = 1.0;
            for (b, &y) in block.iter().enumerate() {
                if a != b {
                    p[(a, b)] = chain.p[(x, y)];
                    stay -= chain.p[(x, y)];
                }
            }
            p[(a, a)] = stay.max(0.0);
        }
        let pi = block.iter().map(|&x| chain.pi[x] / mass).collect();
        restricted.push(FiniteChain::new(p, pi)?);
    }
    let masses: Vec<f64> = blocks.iter().map(|b| b.iter().map(|&x| chain.pi[x]).sum()).collect();
    let mut flows = DMatrix::zeros(nb, nb);
    for x in 0..chain.n() {
        for y in 0..chain.n() {
            flows[(partition.labels[x], partition.labels[y])] += chain.pi[x] * chain.p[(x, y)];
        }
    }
    // Average the two directions so roundoff cannot break detailed balance.
    let sym = (&flows + flows.transpose()) * 0.5;
    let mut pbar = DMatrix::zeros(nb, nb);
    for k in 0..nb {
        let mut off = 0.0;
        for l in 0..nb {
            if k != l {
                pbar[(k, l)] = sym[(k, l)] / masses[k];
                off += pbar[(k, l)];
            }
        }
        pbar[(k, k)] = (1.0 - off).max(0.0);
    }
    let total: f64 = masses.iter().sum();
    let pi_bar = masses.iter().map(|m| m / total).collect();
    Ok(Decomposition { blocks, restricted, projected: FiniteChain::new(pbar, pi_bar)? })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `lhs ≥ rhs`.
    AtLeast,
    /// `lhs ≤ rhs`.
    AtMost,
    /// `lhs = rhs`.
    Equal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Failure,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub relation: Relation,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// How a violation is counted.
    pub severity: Severity,
}

impl CheckEntry {
    pub fn new(name: &str, relation: Relation, lhs: f64, rhs: f64, tol: f64, severity: Severity) -> Self {
        let scale = 1f64.max(lhs.abs().min(rhs.abs()));
        let slack = tol * if scale.is_finite() { scale } else { 1.0 };
        let holds = match relation {
            Relation::AtLeast => lhs >= rhs - slack || lhs == f64::INFINITY,
            Relation::AtMost => lhs <= rhs + slack || rhs == f64::INFINITY,
            Relation::Equal => (lhs - rhs).abs() <= tol * 1f64.max(lhs.abs()),
        };
        CheckEntry { name: name.to_string(), relation, lhs, rhs, holds, severity }
    }

    pub fn is_failure(&self) -> bool {
        !self.holds && self.severity == Severity::Failure
    }

    pub fn is_warning(&self) -> bool {
        !self.holds && self.severity == Severity::Warning
    }
}

/// `a·b` with `0·∞ = 0`.
fn scale_by(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub s: f64,
    pub gap: f64,
    pub projected_gap: f64,
    pub restricted_gaps: Vec<f64>,
    pub gamma: f64,
    pub phi_s: f64,
    pub s_tilde: f64,
    pub psi: f64,
    pub half_mass_set: bool,
    /// `λ(P̄) ≤ 1`, a half-mass set exists, and `Ψ(s̃) ≤ 4/3`.
    pub hypotheses_met: bool,
    pub entries: Vec<CheckEntry>,
}

impl DecompositionReport {
    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.is_failure()).count()
    }

    pub fn warnings(&self) -> usize {
        self.entries.iter().filter(|e| e.is_warning()).count()
    }
}

fn psi(restricted: &[FiniteChain], s: f64) -> Result<f64> {
    restricted
        .iter()
        .map(|c| s_conductance_exact(c, s))
        .try_fold(f64::INFINITY, |acc, v| v.map(|v| acc.min(v)))
}

/// Checks the s-conductance and spectral-gap decomposition bounds plus the
/// Dirichlet-form identity and variance inequality on `n_functions` random
/// test functions.
pub fn decomposition_check<R: Rng + ?Sized>(
    chain: &FiniteChain,
    partition: &Partition,
    s: f64,
    n_functions: usize,
    rng: &mut R,
) -> Result<DecompositionReport> {
    let dec = decompose(chain, partition)?;
    let gap = spectral_gap(chain);
    let lbar = spectral_gap(&dec.projected);
    let gaps: Vec<f64> = dec.restricted.iter().map(spectral_gap).collect();
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let mut gamma = 0.0f64;
    for (x, &k) in partition.labels.iter().enumerate() {
        let escape: f64 = (0..chain.n()).filter(|&y| partition.labels[y] != k).map(|y| chain.p[(x, y)]).sum();
        gamma = gamma.max(escape);
    }
    let phi = s_conductance_exact(chain, s)?;
    let s_tilde = lbar * s / 8.0;
    let psi_t = psi(&dec.restricted, s_tilde)?;
    let half = has_half_mass_set(&chain.pi)?;
    let hypotheses = lbar <= 1.0 + ROW_TOL && half && psi_t <= 4.0 / 3.0;

    let mut entries = Vec::new();
    let stated = scale_by(lbar / 8.0, psi_t);
    entries.push(CheckEntry::new(
        "conductance_decomposition",
        Relation::AtLeast,
        phi,
        stated,
        BOUND_SLACK,
        if hypotheses { Severity::Failure } else { Severity::Warning },
    ));
    let core = (lbar / 6.0).min(scale_by(lbar / 8.0, psi_t));
    entries.push(CheckEntry::new(
        "conductance_decomposition_min_form",
        Relation::AtLeast,
        phi,
        core,
        BOUND_SLACK,
        if lbar <= 1.0 + ROW_TOL { Severity::Failure } else { Severity::Warning },
    ));
    let denom = 6.0 * gamma + 2.0 * lbar;
    let general = if denom == 0.0 {
        0.0
    } else {
        let c = lbar / denom;
        (lbar / 6.0).min(scale_by(c, psi(&dec.restricted, c * s)?))
    };
    entries.push(CheckEntry::new(
        "conductance_decomposition_general",
        Relation::AtLeast,
        phi,
        general,
        BOUND_SLACK,
        Severity::Failure,
    ));
    entries.push(CheckEntry::new(
        "gap_decomposition",
        Relation::AtLeast,
        gap,
        0.5 * lbar * min_gap,
        BOUND_SLACK,
        Severity::Failure,
    ));

    let nb = dec.blocks.len();
    let pi_bar = dec.projected.pi().to_vec();
    let mut worst_e: Option<CheckEntry> = None;
    let mut worst_v: Option<CheckEntry> = None;
    for _ in 0..n_functions {
        let g: Vec<f64> = (0..chain.n()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let e_total = dirichlet_form(chain, &g);
        let mut cross = 0.0;
        let n = chain.n();
        for x in 0..n {
            for y in 0..n {
                if partition.labels[x] != partition.labels[y] {
                    let d = g[y] - g[x];
                    cross += chain.pi[x] * chain.p[(x, y)] * d * d;
                }
            }
        }
        let mut within = 0.0;
        let mut within_var = 0.0;
        for k in 0..nb {
            let gk: Vec<f64> = dec.blocks[k].iter().map(|&x| g[x]).collect();
            within += pi_bar[k] * dirichlet_form(&dec.restricted[k], &gk);
            within_var += pi_bar[k] * variance(dec.restricted[k].pi(), &gk);
        }
        let e_entry = CheckEntry::new(
            "dirichlet_decomposition_identity",
            Relation::Equal,
            e_total,
            0.5 * cross + within,
            IDENTITY_TOL,
            Severity::Failure,
        );
        let v = variance(&chain.pi, &g);
        let v_rhs = if lbar == 0.0 {
            f64::INFINITY
        } else {
            1.5 / lbar * cross + (3.0 * gamma / lbar + 1.0) * within_var
        };
        let v_entry = CheckEntry::new(
            "variance_decomposition",
            Relation::AtMost,
            v,
            v_rhs,
            BOUND_SLACK,
            Severity::Failure,
        );
        let e_gap = (e_entry.lhs - e_entry.rhs).abs();
        if worst_e.as_ref().is_none_or(|w| e_gap > (w.lhs - w.rhs).abs()) {
            worst_e = Some(e_entry);
        }
        if worst_v.as_ref().is_none_or(|w| v_entry.lhs - v_entry.rhs > w.lhs - w.rhs) {
            worst_v = Some(v_entry);
        }
    }
    entries.extend(worst_e);
    entries.extend(worst_v);
    Ok(DecompositionReport {
        s,
        gap,
        projected_gap: lbar,
        restricted_gaps: gaps,
        gamma,
        phi_s: phi,
        s_tilde,
        psi: psi_t,
        half_mass_set: half,
        hypotheses_met: hypotheses,
        entries,
    })
}

/// Finite Metropolis–Hastings chain for `target` under a row-stochastic
/// `proposal` whose support is symmetric.
pub fn mh_finite(target: &[f64], proposal: &DMatrix<f64>) -> Result<FiniteChain> {
    let n = target.len();
    if proposal.nrows() != n || proposal.ncols() != n {
        return Err(Error::InvalidProposal(format!(
            "proposal is {}x{} for {n} states",
            proposal.nrows(),
            proposal.ncols()
        )));
    }
    for (k, row) in proposal.row_iter().enumerate() {
        if row.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::InvalidProposal(format!("row {k} has a negative or non-finite entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_TOL {
            return Err(Error::InvalidProposal(format!("row {k} sums to {s}")));
        }
    }
    for x in 0..n {
        for y in 0..n {
            if (proposal[(x, y)] > 0.0) != (proposal[(y, x)] > 0.0) {
                return Err(Error::InvalidProposal(format!("support is not symmetric at ({x}, {y})")));
            }
        }
    }
    let mut p = DMatrix::zeros(n, n);
    for x in 0..n {
        let mut stay = 1.0;
        for y in 0..n {
            if x != y && proposal[(x, y)] > 0.0 {
                let ratio = target[y] * proposal[(y, x)] / (target[x] * proposal[(x, y)]);
                p[(x, y)] = proposal[(x, y)] * ratio.min(1.0);
                stay -= p[(x, y)];
            }
        }
        p[(x, x)] = stay.max(0.0);
    }
    FiniteChain::new(p, target.to_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub c: f64,
    pub s: f64,
    pub entries: Vec<CheckEntry>,
}

/// `Φ_s(P_1) ≥ c²Φ_{cs}(P_2)` and `λ(P_1) ≥ c²λ(P_2)` for two MH chains
/// sharing `proposal`, with `c = min_x min{π_1/π_2, π_2/π_1}`.
pub fn comparison_check(
    target1: &[f64],
    target2: &[f64],
    proposal: &DMatrix<f64>,
    s: f64,
) -> Result<ComparisonReport> {
    let p1 = mh_finite(target1, proposal)?;
    let p2 = mh_finite(target2, proposal)?;
    let c = target1
        .iter()
        .zip(target2)
        .map(|(a, b)| (a / b).min(b / a))
        .fold(1.0, f64::min);
    let phi1 = s_conductance_exact(&p1, s)?;
    let phi2 = s_conductance_exact(&p2, c * s)?;
    let entries = vec![
        CheckEntry::new("conductance_comparison", Relation::AtLeast, phi1, scale_by(c * c, phi2), BOUND_SLACK, Severity::Failure),
        CheckEntry::new(
            "gap_comparison",
            Relation::AtLeast,
            spectral_gap(&p1),
            c * c * spectral_gap(&p2),
            BOUND_SLACK,
            Severity::Failure,
        ),
    ];
    Ok(ComparisonReport { c, s, entries })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvLevel {
    pub s: f64,
    pub phi_s: f64,
    /// `max_t (TV_t - bound_t)`; nonpositive when the bound holds.
    pub worst_excess: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvReport {
    pub eta: f64,
    pub horizon: usize,
    pub tv: Vec<f64>,
    pub levels: Vec<TvLevel>,
    pub half_mass_set: bool,
    /// `λ/2 ≤ Φ_s ≤ 1/(1-2s)` per level; only checked with a half-mass set.
    pub sandwich: Vec<CheckEntry>,
}

impl TvReport {
    pub fn passed(&self) -> bool {
        self.levels.iter().all(|l| l.holds) && self.sandwich.iter().all(|e| !e.is_failure())
    }
}

pub const TV_LEVELS: [f64; 3] = [0.0, 0.01, 0.1];

/// Exact `‖νP^t - Π‖_TV` for `t ≤ horizon` against `ηs + η e^{-tΦ_s²/2}`.
pub fn tv_mixing_bound_check(chain: &FiniteChain, nu: &[f64], horizon: usize) -> Result<TvReport> {
    if !chain.is_lazy() {
        return Err(Error::InvalidArgument("the TV bound needs a lazy chain".into()));
    }
    let n = chain.n();
    if nu.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: nu.len() });
    }
    if nu.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (nu.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument("initial law must be a probability vector".into()));
    }
    let eta = nu.iter().zip(&chain.pi).map(|(a, b)| a / b).fold(0.0, f64::max);
    let mut dist = nu.to_vec();
    let mut tv = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        tv.push(0.5 * dist.iter().zip(&chain.pi).map(|(a, b)| (a - b).abs()).sum::<f64>());
        if t < horizon {
            let mut next = vec![0.0; n];
            for x in 0..n {
                if dist[x] != 0.0 {
                    for y in 0..n {
                        next[y] += dist[x] * chain.p[(x, y)];
                    }
                }
            }
            dist = next;
        }
    }
    let gap = spectral_gap(chain);
    let half = has_half_mass_set(&chain.pi)?;
    let mut levels = Vec::new();
    let mut sandwich = Vec::new();
    for &s in &TV_LEVELS {
        let phi = s_conductance_exact(chain, s)?;
        let mut worst = f64::NEG_INFINITY;
        for (t, &d) in tv.iter().enumerate() {
            let decay = if phi.is_infinite() { 0.0 } else { (-(t as f64) * phi * phi / 2.0).exp() };
            let bound = eta * s + eta * decay;
            worst = worst.max(d - bound);
        }
        levels.push(TvLevel { s, phi_s: phi, worst_excess: worst, holds: worst <= BOUND_SLACK });
        if half {
            sandwich.push(CheckEntry::new("gap_below_conductance", Relation::AtLeast, phi, gap / 2.0, BOUND_SLACK, Severity::Failure));
            sandwich.push(CheckEntry::new(
                "conductance_ceiling",
                Relation::AtMost,
                phi,
                1.0 / (1.0 - 2.0 * s),
                BOUND_SLACK,
                Severity::Failure,
            ));
        }
    }
    Ok(TvReport { eta, horizon, tv, levels, half_mass_set: half, sandwich })
}

/// Stationary vector from iid `Exp(1)` draws (a flat Dirichlet). With
/// `balanced`, a random nonempty proper subset is rescaled to mass exactly
/// ½ so that a half-mass set exists.
pub fn random_stationary<R: Rng + ?Sized>(rng: &mut R, n: usize, balanced: bool) -> Vec<f64> {
    let mut pi: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1) + 1e-3).collect();
    if balanced && n >= 2 {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let k = rng.random_range(1..n);
        let (a, b) = idx.split_at(k);
        let sa: f64 = a.iter().map(|&i| pi[i]).sum();
        let sb: f64 = b.iter().map(|&i| pi[i]).sum();
        for &i in a {
            pi[i] *= 0.5 / sa;
        }
        for &i in b {
            pi[i] *= 0.5 / sb;
        }
        return pi;
    }
    let total: f64 = pi.iter().sum();
    pi.iter().map(|v| v / total).collect()
}

/// Symmetric proposal from a random sparse nonnegative matrix, scaled so
/// every row sums to at most 1, with the remainder on the diagonal.
pub fn random_symmetric_proposal<R: Rng + ?Sized>(rng: &mut R, n: usize, density: f64) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in (x + 1)..n {
            if rng.random::<f64>() < density {
                let v = rng.random::<f64>();
                s[(x, y)] = v;
                s[(y, x)] = v;
            }
        }
    }
    let max_row = s.row_iter().map(|r| r.sum()).fold(0.0, f64::max);
    if max_row > 0.0 {
        s /= max_row;
    }
    for x in 0..n {
        let off: f64 = s.row(x).sum();
        s[(x, x)] = (1.0 - off).max(0.0);
    }
    s
}

/// Random lazy reversible chain: Dirichlet `π`, symmetric proposal,
/// Metropolized, then made lazy.
pub fn random_lazy_chain<R: Rng + ?Sized>(rng: &mut R, n: usize, balanced: bool) -> FiniteChain {
    let pi = random_stationary(rng, n, balanced);
    let q = random_symmetric_proposal(rng, n, 0.6);
    mh_finite(&pi, &q).expect("generated proposal is valid").lazy()
}

/// Random partition of `n` states into exactly `blocks` nonempty blocks.
pub fn random_partition<R: Rng + ?Sized>(rng: &mut R, n: usize, blocks: usize) -> Partition {
    let blocks = blocks.clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut labels = vec![0; n];
    for (k, &x) in idx.iter().enumerate() {
        labels[x] = if k < blocks { k } else { rng.random_range(0..blocks) };
    }
    Partition::new(labels).expect("every block is seeded")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckTally {
    pub name: String,
    pub checked: usize,
    pub failures: usize,
    pub warnings: usize,
    /// Smallest signed margin seen (`lhs - rhs` for lower bounds, `rhs - lhs`
    /// for upper bounds, `-|lhs - rhs|` for identities).
    pub worst_margin: f64,
}

fn margin(e: &CheckEntry) -> f64 {
    match e.relation {
        Relation::AtLeast => e.lhs - e.rhs,
        Relation::AtMost => e.rhs - e.lhs,
        Relation::Equal => -(e.lhs - e.rhs).abs(),
    }
}

pub fn tally(entries: &[CheckEntry]) -> Vec<CheckTally> {
    let mut out: Vec<CheckTally> = Vec::new();
    for e in entries {
        let t = match out.iter_mut().find(|t| t.name == e.name) {
            Some(t) => t,
            None => {
                out.push(CheckTally { name: e.name.clone(), worst_margin: f64::INFINITY, ..Default::default() });
                out.last_mut().unwrap()
            }
        };
        t.checked += 1;
        t.failures += e.is_failure() as usize;
        t.warnings += e.is_warning() as usize;
        let m = margin(e);
        if !m.is_nan() {
            t.worst_margin = t.worst_margin.min(m);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub chains: usize,
    pub s_values: Vec<f64>,
    pub checks: Vec<CheckTally>,
    pub failures: usize,
    pub warnings: usize,
    pub hypotheses_met: usize,
    pub passed: bool,
}

pub const CAMPAIGN_S_VALUES: [f64; 3] = [0.0, 0.05, 0.2];

/// Decomposition checks on `chains` random lazy reversible chains with
/// `3 ≤ n ≤ 12` states and 2–4 blocks; half the chains have a half-mass set.
pub fn decomposition_campaign(chains: usize, seed: u64, s_values: &[f64]) -> Result<CampaignReport> {
    let reports: Vec<Vec<DecompositionReport>> = (0..chains)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let n = rng.random_range(4..=12);
            let chain = random_lazy_chain(&mut rng, n, k % 2 == 0);
            let blocks = rng.random_range(2..=4usize.min(n));
            let part = random_partition(&mut rng, n, blocks);
            s_values
                .iter()
                .map(|&s| decomposition_check(&chain, &part, s, 100, &mut rng))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<&DecompositionReport> = reports.iter().flatten().collect();
    let entries: Vec<CheckEntry> = all.iter().flat_map(|r| r.entries.iter().cloned()).collect();
    let checks = tally(&entries);
    let failures = checks.iter().map(|t| t.failures).sum();
    Ok(CampaignReport {
        chains,
        s_values: s_values.to_vec(),
        warnings: checks.iter().map(|t| t.warnings).sum(),
        failures,
        hypotheses_met: all.iter().filter(|r| r.hypotheses_met).count(),
        checks,
        passed: failures == 0,
    })
}

/// Lemma-style comparison on `instances` random pairs of targets sharing a
/// proposal, at each `s` in `s_values`.
pub fn comparison_campaign(instances: usize, seed: u64, s_values: &[f64]) -> Result<CampaignReport> {
    let entries: Vec<CheckEntry> = (0..instances)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let n = rng.random_range(3..=10);
            let q = random_symmetric_proposal(&mut rng, n, 0.7);
            let p1 = random_stationary(&mut rng, n, false);
            // Perturb by bounded log-factors so π_1/π_2 stays in [c, 1/c].
            let raw: Vec<f64> = p1.iter().map(|v| v * (rng.random::<f64>() * 2.0 - 1.0).exp()).collect();
            let total: f64 = raw.iter().sum();
            let p2: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let mut out = Vec::new();
            for &s in s_values {
                out.extend(comparison_check(&p1, &p2, &q, s)?.entries);
            }
            Ok(out)
        })
        .collect::<Result<Vec<Vec<CheckEntry>>>>()?
        .into_iter()
        .flatten()
        .collect();
    let checks = tally(&entries);
    let failures = checks.iter().map(|t| t.failures).sum();
    Ok(CampaignReport {
        chains: instances,
        s_values: s_values.to_vec(),
        warnings: 0,
        failures,
        hypotheses_met: instances,
        checks,
        passed: failures == 0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvCampaignReport {
    pub chains: usize,
    pub horizon: usize,
    pub violations: usize,
    pub sandwich_failures: usize,
    pub worst_excess: f64,
    pub passed: bool,
}

/// TV bound from a point mass on the lowest-`π` state for random lazy chains.
pub fn tv_campaign(chains: usize, seed: u64, horizon: usize) -> Result<TvCampaignReport> {
    let reports = (0..chains)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let n = rng.random_range(3..=10);
            let chain = random_lazy_chain(&mut rng, n, k % 2 == 0);
            let low = (0..n).min_by(|&a, &b| chain.pi[a].total_cmp(&chain.pi[b])).unwrap();
            let mut nu = vec![0.0; n];
            nu[low] = 1.0;
            tv_mixing_bound_check(&chain, &nu, horizon)
        })
        .collect::<Result<Vec<TvReport>>>()?;
    let violations = reports.iter().flat_map(|r| &r.levels).filter(|l| !l.holds).count();
    let sandwich_failures = reports.iter().flat_map(|r| &r.sandwich).filter(|e| e.is_failure()).count();
    let worst = reports.iter().flat_map(|r| &r.levels).map(|l| l.worst_excess).fold(f64::NEG_INFINITY, f64::max);
    Ok(TvCampaignReport {
        chains,
        horizon,
        violations,
        sandwich_failures,
        worst_excess: worst,
        passed: violations == 0 && sandwich_failures == 0,
    })
}
