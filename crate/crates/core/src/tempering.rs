//! The simulated tempering chain `P*` on `(level, x)` and the auxiliary chain
//! `P` on `(level, label, x)`, with RWM and MALA position proposals.
//!
//! Level moves propose `i ± 1` with probability `q_adj` each; proposals that
//! would leave `[0, T)` become holds. Position proposals at level `i` are
//! `N(x, 2h/β_i)` (RWM) or `N(x - h∇U(x), 2h/β_i)` (MALA, with the drift
//! deliberately not rescaled by `β_i`).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ladder::{check_swap_params, Ladder};
use crate::logspace::log_sum_exp;
use crate::rng::{standard_normal, stream_rng};
use crate::targets::{
    label_weights_at, mixture_potential, potential_and_gradient, MixtureSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalKind {
    Rwm,
    Mala,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperingConfig {
    pub proposal: ProposalKind,
    pub h: f64,
    pub alpha: f64,
    pub q_adj: f64,
    pub lazy: bool,
    pub seed: u64,
}

impl TemperingConfig {
    pub fn new(proposal: ProposalKind, h: f64) -> Self {
        TemperingConfig { proposal, h, alpha: 0.5, q_adj: 0.5, lazy: true, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {}", self.h)));
        }
        check_swap_params(self.alpha, self.q_adj)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperingState {
    pub level: usize,
    pub x: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugState {
    pub level: usize,
    pub label: usize,
    pub x: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MoveType {
    #[serde(rename = "init")]
    Init,
    #[serde(rename = "x-move")]
    XMove,
    #[serde(rename = "swap-up")]
    SwapUp,
    #[serde(rename = "swap-down")]
    SwapDown,
    #[serde(rename = "hold")]
    Hold,
    #[serde(rename = "label")]
    Label,
}

/// One step of a trajectory. `level` and `x` are the state after the step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub level: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    pub label_nearest: usize,
    pub x1: f64,
    pub move_type: MoveType,
    pub accepted: bool,
    #[serde(default)]
    pub numerical_reject: bool,
    #[serde(default)]
    pub lazy_hold: bool,
    /// Level the step started from; differs from `level` only after an
    /// accepted swap.
    pub from_level: usize,
    pub x: Vec<f64>,
}

/// `log q(x → y)` for the position proposal at inverse temperature `beta`,
/// up to the constant shared by both directions. `grad_from` is `∇U(from)`
/// and is ignored for RWM.
pub fn log_proposal_density(
    kind: ProposalKind,
    h: f64,
    beta: f64,
    from: &[f64],
    grad_from: Option<&[f64]>,
    to: &[f64],
) -> f64 {
    let mut s = 0.0;
    for k in 0..from.len() {
        let mean = match (kind, grad_from) {
            (ProposalKind::Mala, Some(g)) => from[k] - h * g[k],
            _ => from[k],
        };
        let r = to[k] - mean;
        s += r * r;
    }
    -beta / (4.0 * h) * s
}

/// Log acceptance ratio (before `min(0, ·)`) of an `x → y` move at level
/// inverse temperature `beta` for a target with potential `beta·V`.
#[allow(clippy::too_many_arguments)]
pub fn x_move_log_ratio(
    kind: ProposalKind,
    h: f64,
    beta: f64,
    x: &[f64],
    v_x: f64,
    grad_x: Option<&[f64]>,
    y: &[f64],
    v_y: f64,
    grad_y: Option<&[f64]>,
) -> f64 {
    let mut r = -beta * (v_y - v_x);
    if kind == ProposalKind::Mala {
        r += log_proposal_density(kind, h, beta, y, grad_y, x)
            - log_proposal_density(kind, h, beta, x, grad_x, y);
    }
    r
}

/// `ζ_{i'} - ζ_i - (β_{i'} - β_i)U(x)`.
pub fn st_level_log_ratio(ladder: &Ladder, from: usize, to: usize, u: f64) -> f64 {
    let z = ladder.log_weights();
    z[to] - z[from] - (ladder.beta(to) - ladder.beta(from)) * u
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    if log_ratio.is_nan() {
        return false;
    }
    rng.random::<f64>() < log_ratio.exp()
}

enum LevelProposal {
    Move(usize, MoveType),
    Stay,
}

fn propose_level<R: Rng + ?Sized>(level: usize, t: usize, q_adj: f64, rng: &mut R) -> LevelProposal {
    let v = rng.random::<f64>();
    if v < q_adj {
        if level + 1 < t {
            LevelProposal::Move(level + 1, MoveType::SwapUp)
        } else {
            LevelProposal::Stay
        }
    } else if v < 2.0 * q_adj {
        if level > 0 {
            LevelProposal::Move(level - 1, MoveType::SwapDown)
        } else {
            LevelProposal::Stay
        }
    } else {
        LevelProposal::Stay
    }
}

fn propose_position<R: Rng + ?Sized>(
    kind: ProposalKind,
    h: f64,
    beta: f64,
    x: &[f64],
    grad: Option<&[f64]>,
    rng: &mut R,
) -> Vec<f64> {
    let sd = (2.0 * h / beta).sqrt();
    let z = standard_normal(rng, x.len());
    (0..x.len())
        .map(|k| {
            let mean = match (kind, grad) {
                (ProposalKind::Mala, Some(g)) => x[k] - h * g[k],
                _ => x[k],
            };
            mean + sd * z[k]
        })
        .collect()
}

#[derive(Clone, Debug)]
struct Eval {
    u: f64,
    grad: Option<Vec<f64>>,
}

fn evaluate(spec: &MixtureSpec, kind: ProposalKind, x: &[f64]) -> Result<Eval> {
    match kind {
        ProposalKind::Rwm => Ok(Eval { u: mixture_potential(spec, x)?, grad: None }),
        ProposalKind::Mala => {
            let (u, g) = potential_and_gradient(spec, x)?;
            if !u.is_finite() {
                return Err(Error::NonFinite { what: "mixture potential", component: None });
            }
            Ok(Eval { u, grad: Some(g) })
        }
    }
}

fn check_state(spec: &MixtureSpec, ladder: &Ladder, level: usize, x: &[f64]) -> Result<()> {
    ladder.beta_checked(level)?;
    spec.check_point(x)
}

/// Stateful `P*` chain that caches `U` and `∇U` at the current point.
pub struct StChain<'a> {
    spec: &'a MixtureSpec,
    ladder: &'a Ladder,
    config: &'a TemperingConfig,
    state: TemperingState,
    eval: Eval,
    step: u64,
}

impl<'a> StChain<'a> {
    pub fn new(
        spec: &'a MixtureSpec,
        ladder: &'a Ladder,
        config: &'a TemperingConfig,
        state: TemperingState,
    ) -> Result<Self> {
        config.validate()?;
        check_state(spec, ladder, state.level, &state.x)?;
        let eval = evaluate(spec, config.proposal, &state.x)?;
        Ok(StChain { spec, ladder, config, state, eval, step: 0 })
    }

    pub fn state(&self) -> &TemperingState {
        &self.state
    }

    pub fn potential(&self) -> f64 {
        self.eval.u
    }

    fn record(&self, from_level: usize, move_type: MoveType, accepted: bool) -> TraceRecord {
        TraceRecord {
            step: self.step,
            level: self.state.level,
            label: None,
            label_nearest: self.spec.nearest_mode(&self.state.x),
            x1: self.state.x[0],
            move_type,
            accepted,
            numerical_reject: false,
            lazy_hold: false,
            from_level,
            x: self.state.x.clone(),
        }
    }

    pub fn initial_record(&self) -> TraceRecord {
        self.record(self.state.level, MoveType::Init, true)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> TraceRecord {
        self.step += 1;
        let from = self.state.level;
        if self.config.lazy && rng.random::<bool>() {
            let mut rec = self.record(from, MoveType::Hold, true);
            rec.lazy_hold = true;
            return rec;
        }
        let t = self.ladder.num_levels();
        if rng.random::<f64>() < self.config.alpha {
            return match propose_level(from, t, self.config.q_adj, rng) {
                LevelProposal::Stay => self.record(from, MoveType::Hold, true),
                LevelProposal::Move(to, kind) => {
                    let lr = st_level_log_ratio(self.ladder, from, to, self.eval.u);
                    let ok = accept(lr, rng);
                    if ok {
                        self.state.level = to;
                    }
                    self.record(from, kind, ok)
                }
            };
        }
        let beta = self.ladder.beta(from);
        let cfg = self.config;
        let y = propose_position(cfg.proposal, cfg.h, beta, &self.state.x, self.eval.grad.as_deref(), rng);
        let ey = match evaluate(self.spec, cfg.proposal, &y) {
            Ok(e) if e.u.is_finite() => e,
            _ => {
                let mut rec = self.record(from, MoveType::XMove, false);
                rec.numerical_reject = true;
                return rec;
            }
        };
        let lr = x_move_log_ratio(
            cfg.proposal,
            cfg.h,
            beta,
            &self.state.x,
            self.eval.u,
            self.eval.grad.as_deref(),
            &y,
            ey.u,
            ey.grad.as_deref(),
        );
        let ok = accept(lr, rng);
        if ok {
            self.state.x = y;
            self.eval = ey;
        }
        self.record(from, MoveType::XMove, ok)
    }
}

/// One `P*` transition (lazy if the config says so).
pub fn st_step<R: Rng + ?Sized>(
    state: &TemperingState,
    spec: &MixtureSpec,
    ladder: &Ladder,
    config: &TemperingConfig,
    rng: &mut R,
) -> Result<(TemperingState, TraceRecord)> {
    let mut chain = StChain::new(spec, ladder, config, state.clone())?;
    let rec = chain.step(rng);
    Ok((chain.state, rec))
}

/// Level weights `r_i` and normalizers `log C_i` for the joint density
/// `π(i, j, x) = (r_i/C_i) w_j e^{-β_i f(x - μ_j)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxTarget {
    pub log_r: Vec<f64>,
    pub log_c: Vec<f64>,
}

impl AuxTarget {
    /// `r = softmax(ζ)` and the analytic `log C_i` of a quadratic potential.
    pub fn new(spec: &MixtureSpec, ladder: &Ladder) -> Result<Self> {
        let log_c = ladder
            .betas()
            .iter()
            .map(|&b| spec.local().log_normalizer(b, spec.dim()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| {
                Error::Unsupported(format!(
                    "the {} local potential needs a user-supplied log normalizer table",
                    spec.local().name()
                ))
            })?;
        Self::with_log_normalizers(ladder, log_c)
    }

    pub fn with_log_normalizers(ladder: &Ladder, log_c: Vec<f64>) -> Result<Self> {
        if log_c.len() != ladder.num_levels() {
            return Err(Error::DimensionMismatch { expected: ladder.num_levels(), got: log_c.len() });
        }
        if log_c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "log normalizer table", component: None });
        }
        let z = ladder.log_weights();
        let lse = log_sum_exp(z);
        Ok(AuxTarget { log_r: z.iter().map(|v| v - lse).collect(), log_c })
    }

    /// `log π(i, j, x)`.
    pub fn log_joint(&self, spec: &MixtureSpec, ladder: &Ladder, level: usize, label: usize, x: &[f64]) -> f64 {
        self.log_r[level] - self.log_c[level] + spec.log_weights()[label]
            - ladder.beta(level) * spec.component_potential(label, x)
    }

    /// `log π(i, x) = log Σ_j π(i, j, x)`.
    pub fn log_level_marginal(&self, spec: &MixtureSpec, ladder: &Ladder, level: usize, x: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..spec.num_components())
            .map(|j| self.log_joint(spec, ladder, level, j, x))
            .collect();
        log_sum_exp(&terms)
    }

    /// `log(r_{i'}C_i/(r_i C_{i'})) - (β_{i'} - β_i) f(x - μ_j)`.
    pub fn level_log_ratio(&self, ladder: &Ladder, from: usize, to: usize, f_j: f64) -> f64 {
        self.log_r[to] - self.log_r[from] + self.log_c[from] - self.log_c[to]
            - (ladder.beta(to) - ladder.beta(from)) * f_j
    }
}

/// Stateful auxiliary chain `P`.
pub struct AuxChain<'a> {
    spec: &'a MixtureSpec,
    ladder: &'a Ladder,
    config: &'a TemperingConfig,
    target: AuxTarget,
    state: AugState,
    f_label: f64,
    grad: Option<Vec<f64>>,
    step: u64,
}

impl<'a> AuxChain<'a> {
    pub fn new(
        spec: &'a MixtureSpec,
        ladder: &'a Ladder,
        config: &'a TemperingConfig,
        target: AuxTarget,
        state: AugState,
    ) -> Result<Self> {
        config.validate()?;
        check_state(spec, ladder, state.level, &state.x)?;
        if state.label >= spec.num_components() {
            return Err(Error::IndexOutOfRange {
                what: "labels",
                index: state.label,
                len: spec.num_components(),
            });
        }
        if target.log_r.len() != ladder.num_levels() {
            return Err(Error::DimensionMismatch { expected: ladder.num_levels(), got: target.log_r.len() });
        }
        let f_label = spec.component_potential(state.label, &state.x);
        let grad = match config.proposal {
            ProposalKind::Mala => Some(potential_and_gradient(spec, &state.x)?.1),
            ProposalKind::Rwm => None,
        };
        Ok(AuxChain { spec, ladder, config, target, state, f_label, grad, step: 0 })
    }

    pub fn state(&self) -> &AugState {
        &self.state
    }

    fn record(&self, from_level: usize, move_type: MoveType, accepted: bool) -> TraceRecord {
        TraceRecord {
            step: self.step,
            level: self.state.level,
            label: Some(self.state.label),
            label_nearest: self.spec.nearest_mode(&self.state.x),
            x1: self.state.x[0],
            move_type,
            accepted,
            numerical_reject: false,
            lazy_hold: false,
            from_level,
            x: self.state.x.clone(),
        }
    }

    pub fn initial_record(&self) -> TraceRecord {
        self.record(self.state.level, MoveType::Init, true)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> TraceRecord {
        self.step += 1;
        let from = self.state.level;
        if self.config.lazy && rng.random::<bool>() {
            let mut rec = self.record(from, MoveType::Hold, true);
            rec.lazy_hold = true;
            return rec;
        }
        let beta = self.ladder.beta(from);
        if rng.random::<bool>() {
            let probs = match label_weights_at(self.spec, beta, &self.state.x) {
                Ok(p) => p,
                Err(_) => {
                    let mut rec = self.record(from, MoveType::Label, false);
                    rec.numerical_reject = true;
                    return rec;
                }
            };
            self.state.label = sample_index(&probs, rng);
            self.f_label = self.spec.component_potential(self.state.label, &self.state.x);
            return self.record(from, MoveType::Label, true);
        }
        let t = self.ladder.num_levels();
        if rng.random::<f64>() < self.config.alpha {
            return match propose_level(from, t, self.config.q_adj, rng) {
                LevelProposal::Stay => self.record(from, MoveType::Hold, true),
                LevelProposal::Move(to, kind) => {
                    let lr = self.target.level_log_ratio(self.ladder, from, to, self.f_label);
                    let ok = accept(lr, rng);
                    if ok {
                        self.state.level = to;
                    }
                    self.record(from, kind, ok)
                }
            };
        }
        let cfg = self.config;
        let y = propose_position(cfg.proposal, cfg.h, beta, &self.state.x, self.grad.as_deref(), rng);
        let j = self.state.label;
        let f_y = if y.iter().all(|v| v.is_finite()) {
            self.spec.component_potential(j, &y)
        } else {
            f64::NAN
        };
        let grad_y = match cfg.proposal {
            ProposalKind::Mala => potential_and_gradient(self.spec, &y).ok().map(|p| p.1),
            ProposalKind::Rwm => None,
        };
        if !f_y.is_finite() || (cfg.proposal == ProposalKind::Mala && grad_y.is_none()) {
            let mut rec = self.record(from, MoveType::XMove, false);
            rec.numerical_reject = true;
            return rec;
        }
        let lr = x_move_log_ratio(
            cfg.proposal,
            cfg.h,
            beta,
            &self.state.x,
            self.f_label,
            self.grad.as_deref(),
            &y,
            f_y,
            grad_y.as_deref(),
        );
        let ok = accept(lr, rng);
        if ok {
            self.state.x = y;
            self.f_label = f_y;
            self.grad = grad_y;
        }
        self.record(from, MoveType::XMove, ok)
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// One transition of the auxiliary chain `P` using analytic normalizers.
pub fn aux_joint_step<R: Rng + ?Sized>(
    state: &AugState,
    spec: &MixtureSpec,
    ladder: &Ladder,
    config: &TemperingConfig,
    rng: &mut R,
) -> Result<(AugState, TraceRecord)> {
    let target = AuxTarget::new(spec, ladder)?;
    let mut chain = AuxChain::new(spec, ladder, config, target, state.clone())?;
    let rec = chain.step(rng);
    Ok((chain.state, rec))
}

/// Starting point for `run_chain`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ChainInit {
    Tempering(TemperingState),
    Augmented(AugState),
    /// Hottest level, `x ~ N(μ_j, (β_1 m)⁻¹ I)` for a uniformly chosen `j`.
    Default,
    /// As `Default`, but for the auxiliary chain with the drawn label.
    DefaultAugmented,
}

/// The default warm start at the hottest level.
pub fn default_init<R: Rng + ?Sized>(spec: &MixtureSpec, ladder: &Ladder, rng: &mut R) -> AugState {
    let j = rng.random_range(0..spec.num_components());
    let sd = 1.0 / (ladder.beta(0) * spec.local().convexity()).sqrt();
    let z = standard_normal(rng, spec.dim());
    let x = spec.modes()[j].iter().zip(&z).map(|(m, z)| m + sd * z).collect();
    AugState { level: 0, label: j, x }
}

/// Aggregate statistics over every step of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub occupancy: Vec<f64>,
    /// Proposed and accepted swaps between levels `k` and `k+1`, both directions.
    pub swap_attempts: Vec<u64>,
    pub swap_accepts: Vec<u64>,
    pub swap_acceptance: Vec<Option<f64>>,
    pub x_moves: u64,
    pub x_accepts: u64,
    pub lazy_holds: u64,
    pub numerical_rejects: u64,
    /// Sign changes of `⟨x - (μ_1+μ_2)/2, μ_1 - μ_2⟩` along the whole
    /// trajectory (two-component targets only).
    pub mode_traversals: Option<u64>,
    /// The same sign changes counted only between successive visits to the
    /// coldest level.
    pub cold_traversals: Option<u64>,
}

/// Streaming accumulator for `RunSummary`.
pub struct SummaryBuilder {
    counts: Vec<u64>,
    attempts: Vec<u64>,
    accepts: Vec<u64>,
    steps: u64,
    x_moves: u64,
    x_accepts: u64,
    lazy_holds: u64,
    numerical: u64,
    axis: Option<(Vec<f64>, Vec<f64>)>,
    last_side: Option<bool>,
    last_cold_side: Option<bool>,
    traversals: u64,
    cold_traversals: u64,
    cold: usize,
}

impl SummaryBuilder {
    pub fn new(spec: &MixtureSpec, levels: usize) -> Self {
        let axis = (spec.num_components() == 2).then(|| {
            let (a, b) = (&spec.modes()[0], &spec.modes()[1]);
            let dir = a.iter().zip(b).map(|(p, q)| p - q).collect();
            let mid = a.iter().zip(b).map(|(p, q)| 0.5 * (p + q)).collect();
            (dir, mid)
        });
        SummaryBuilder {
            counts: vec![0; levels],
            attempts: vec![0; levels.saturating_sub(1)],
            accepts: vec![0; levels.saturating_sub(1)],
            steps: 0,
            x_moves: 0,
            x_accepts: 0,
            lazy_holds: 0,
            numerical: 0,
            axis,
            last_side: None,
            last_cold_side: None,
            traversals: 0,
            cold_traversals: 0,
            cold: levels - 1,
        }
    }

    fn side(&self, x: &[f64]) -> Option<bool> {
        let (dir, mid) = self.axis.as_ref()?;
        let s: f64 = x.iter().zip(mid).zip(dir).map(|((x, m), d)| (x - m) * d).sum();
        if s == 0.0 {
            None
        } else {
            Some(s > 0.0)
        }
    }

    pub fn observe(&mut self, rec: &TraceRecord) {
        if let Some(side) = self.side(&rec.x) {
            if self.last_side.is_some_and(|prev| prev != side) {
                self.traversals += 1;
            }
            self.last_side = Some(side);
            if rec.level == self.cold {
                if self.last_cold_side.is_some_and(|prev| prev != side) {
                    self.cold_traversals += 1;
                }
                self.last_cold_side = Some(side);
            }
        }
        if rec.move_type == MoveType::Init {
            return;
        }
        self.steps += 1;
        self.counts[rec.level] += 1;
        match rec.move_type {
            MoveType::XMove => {
                self.x_moves += 1;
                self.x_accepts += rec.accepted as u64;
            }
            MoveType::SwapUp | MoveType::SwapDown => {
                let pair = match rec.move_type {
                    MoveType::SwapUp => rec.from_level,
                    _ => rec.from_level - 1,
                };
                self.attempts[pair] += 1;
                self.accepts[pair] += rec.accepted as u64;
            }
            _ => {}
        }
        self.lazy_holds += rec.lazy_hold as u64;
        self.numerical += rec.numerical_reject as u64;
    }

    pub fn finish(self, initial_level: usize) -> RunSummary {
        let mut counts = self.counts;
        if self.steps == 0 {
            counts[initial_level] = 1;
        }
        let total: u64 = counts.iter().sum();
        RunSummary {
            steps: self.steps,
            occupancy: counts.iter().map(|&c| c as f64 / total as f64).collect(),
            swap_acceptance: self
                .attempts
                .iter()
                .zip(&self.accepts)
                .map(|(&a, &b)| (a > 0).then(|| b as f64 / a as f64))
                .collect(),
            swap_attempts: self.attempts,
            swap_accepts: self.accepts,
            x_moves: self.x_moves,
            x_accepts: self.x_accepts,
            lazy_holds: self.lazy_holds,
            numerical_rejects: self.numerical,
            mode_traversals: self.axis.as_ref().map(|_| self.traversals),
            cold_traversals: self.axis.as_ref().map(|_| self.cold_traversals),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub trace: Vec<TraceRecord>,
    pub summary: RunSummary,
}

enum AnyChain<'a> {
    St(StChain<'a>),
    Aux(AuxChain<'a>),
}

impl AnyChain<'_> {
    fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> TraceRecord {
        match self {
            AnyChain::St(c) => c.step(rng),
            AnyChain::Aux(c) => c.step(rng),
        }
    }
}

/// Runs `n_steps` transitions from the given start, calling `observe` on the
/// initial record and then on the record of every step. The RNG stream is
/// `(config.seed, replica)`.
#[allow(clippy::too_many_arguments)]
pub fn run_chain_observed<F: FnMut(&TraceRecord)>(
    init: &ChainInit,
    spec: &MixtureSpec,
    ladder: &Ladder,
    config: &TemperingConfig,
    n_steps: u64,
    replica: u64,
    mut observe: F,
) -> Result<RunSummary> {
    let mut rng = stream_rng(config.seed, replica);
    let target;
    let mut chain = match init {
        ChainInit::Tempering(s) => AnyChain::St(StChain::new(spec, ladder, config, s.clone())?),
        ChainInit::Default => {
            let s = default_init(spec, ladder, &mut rng);
            AnyChain::St(StChain::new(spec, ladder, config, TemperingState { level: s.level, x: s.x })?)
        }
        ChainInit::Augmented(s) => {
            target = AuxTarget::new(spec, ladder)?;
            AnyChain::Aux(AuxChain::new(spec, ladder, config, target, s.clone())?)
        }
        ChainInit::DefaultAugmented => {
            let s = default_init(spec, ladder, &mut rng);
            target = AuxTarget::new(spec, ladder)?;
            AnyChain::Aux(AuxChain::new(spec, ladder, config, target, s)?)
        }
    };
    let first = match &chain {
        AnyChain::St(c) => c.initial_record(),
        AnyChain::Aux(c) => c.initial_record(),
    };
    let initial_level = first.level;
    let mut summary = SummaryBuilder::new(spec, ladder.num_levels());
    summary.observe(&first);
    observe(&first);
    for _ in 0..n_steps {
        let rec = chain.step(&mut rng);
        summary.observe(&rec);
        observe(&rec);
    }
    Ok(summary.finish(initial_level))
}

/// Runs a chain and keeps the initial record plus every `thin`-th step.
pub fn run_chain(
    init: &ChainInit,
    spec: &MixtureSpec,
    ladder: &Ladder,
    config: &TemperingConfig,
    n_steps: u64,
    thin: u64,
    replica: u64,
) -> Result<ChainOutput> {
    if thin == 0 {
        return Err(Error::InvalidArgument("thin must be at least 1".into()));
    }
    let mut trace = Vec::new();
    let summary = run_chain_observed(init, spec, ladder, config, n_steps, replica, |rec| {
        if rec.step % thin == 0 {
            trace.push(rec.clone());
        }
    })?;
    Ok(ChainOutput { trace, summary })
}

/// Independent replicas `0..replicas` run in parallel, one RNG stream each.
#[allow(clippy::too_many_arguments)]
pub fn run_replicas(
    init: &ChainInit,
    spec: &MixtureSpec,
    ladder: &Ladder,
    config: &TemperingConfig,
    n_steps: u64,
    thin: u64,
    replicas: u64,
) -> Result<Vec<ChainOutput>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| run_chain(init, spec, ladder, config, n_steps, thin, r))
        .collect()
}
