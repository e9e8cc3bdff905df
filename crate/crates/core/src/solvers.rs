//! Gradient descent with steepest, lagged and half-lagged step sizes,
//! Jacobi-preconditioned conjugate gradients, and lagged-diffusivity (IRLS)
//! outer iterations.
//!
//! Two problem modes share the machinery. In Tikhonov mode the objective is
//! `T(m) = ½‖Jm − b‖² + β·Σρ(|∇m|)` with gradient `G = Jᵀ(Jm − b) + β·R_m(m)`;
//! `J` is the identity when no transfer function is given. In pure-diffusion
//! mode the data only enters through the initial iterate and `G = R_m(m)`.
//!
//! Step sizes are Rayleigh quotients `GᵀG / GᵀAG` of the quadratic operator
//! `A = JᵀJ + β·L(m)` frozen at an iterate (`A = L(m)` for pure diffusion).

use std::fmt;
use std::str::FromStr;

use crate::blur::{adjoint_map, forward_map, TransferFunction};
use crate::error::{RestoreError, Result};
use crate::grid::{misfit, relative_error, ImageGrid};
use crate::regularization::{
    adaptive_gamma, node_penalty_sum, DiffusionOperator, RegularizerKind, RegularizerSpec,
};

/// Default inner CG tolerance for Tikhonov solves.
pub const CG_TOL: f64 = 1e-6;
/// Default inner CG iteration cap.
pub const CG_MAX_ITERS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemMode {
    Tikhonov,
    PureDiffusion,
}

/// Whether the regularizer threshold is held fixed or recomputed from each
/// iterate with [`adaptive_gamma`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaRule {
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    data: ImageGrid,
    blur: Option<TransferFunction>,
    beta: f64,
    reg: RegularizerSpec,
    gamma_rule: GammaRule,
    mode: ProblemMode,
}

impl ProblemSpec {
    /// Penalized least squares `½‖Jm − b‖² + β·Σρ(|∇m|)`.
    pub fn tikhonov(
        data: ImageGrid,
        blur: Option<TransferFunction>,
        beta: f64,
        reg: RegularizerSpec,
        gamma_rule: GammaRule,
    ) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(RestoreError::Parameter(format!(
                "beta must be finite and non-negative, got {beta}"
            )));
        }
        if beta == 0.0 && blur.is_none() {
            return Err(RestoreError::Parameter(
                "Tikhonov mode needs beta > 0 or a blur operator".into(),
            ));
        }
        if let Some(tf) = &blur {
            if tf.side() != data.side() {
                return Err(RestoreError::SideMismatch {
                    expected: data.side(),
                    actual: tf.side(),
                });
            }
        }
        Ok(ProblemSpec {
            data,
            blur,
            beta,
            reg,
            gamma_rule,
            mode: ProblemMode::Tikhonov,
        })
    }

    /// Pure diffusion `∂m/∂t = −R_m(m)` started from the data.
    pub fn diffusion(data: ImageGrid, reg: RegularizerSpec, gamma_rule: GammaRule) -> Self {
        ProblemSpec {
            data,
            blur: None,
            beta: 0.0,
            reg,
            gamma_rule,
            mode: ProblemMode::PureDiffusion,
        }
    }

    pub fn data(&self) -> &ImageGrid {
        &self.data
    }

    pub fn blur(&self) -> Option<&TransferFunction> {
        self.blur.as_ref()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn reg(&self) -> &RegularizerSpec {
        &self.reg
    }

    pub fn gamma_rule(&self) -> GammaRule {
        self.gamma_rule
    }

    pub fn mode(&self) -> ProblemMode {
        self.mode
    }

    /// The regularizer in effect at iterate `m`.
    pub fn reg_at(&self, m: &ImageGrid) -> RegularizerSpec {
        match self.gamma_rule {
            GammaRule::Fixed => self.reg,
            GammaRule::Adaptive => {
                RegularizerSpec::from_huber_gamma(self.reg.kind(), adaptive_gamma(m))
                    .expect("adaptive gamma is floored above zero")
            }
        }
    }

    fn apply_j(&self, m: &ImageGrid) -> ImageGrid {
        match &self.blur {
            Some(tf) => forward_map(m, tf).expect("lattice checked at construction"),
            None => m.clone(),
        }
    }

    fn apply_jt(&self, r: &ImageGrid) -> ImageGrid {
        match &self.blur {
            Some(tf) => adjoint_map(r, tf).expect("lattice checked at construction"),
            None => r.clone(),
        }
    }
}

fn objective_with(m: &ImageGrid, prob: &ProblemSpec, reg: &RegularizerSpec) -> f64 {
    let penalty = node_penalty_sum(m, reg);
    match prob.mode {
        ProblemMode::PureDiffusion => penalty,
        ProblemMode::Tikhonov => {
            let r = prob.apply_j(m).sub(&prob.data);
            0.5 * r.dot(&r) + prob.beta * penalty
        }
    }
}

fn gradient_with(m: &ImageGrid, prob: &ProblemSpec, reg: &RegularizerSpec) -> ImageGrid {
    let rm = DiffusionOperator::frozen_at(m, reg).apply(m);
    match prob.mode {
        ProblemMode::PureDiffusion => rm,
        ProblemMode::Tikhonov => {
            let mut g = prob.apply_jt(&prob.apply_j(m).sub(&prob.data));
            g.axpy(prob.beta, &rm);
            g
        }
    }
}

/// Objective value `T(m)` with the problem's stored regularizer.
pub fn objective(m: &ImageGrid, prob: &ProblemSpec) -> Result<f64> {
    m.ensure_same_side(&prob.data)?;
    Ok(objective_with(m, prob, &prob.reg))
}

/// `G(m) = Jᵀ(Jm − b) + β·R_m(m)` (Tikhonov) or `R_m(m)` (pure diffusion),
/// with the problem's stored regularizer.
pub fn objective_gradient(m: &ImageGrid, prob: &ProblemSpec) -> Result<ImageGrid> {
    m.ensure_same_side(&prob.data)?;
    Ok(gradient_with(m, prob, &prob.reg))
}

/// `A = JᵀJ + β·L` (or `L`) with the diffusion coefficients frozen.
struct QuadraticOperator<'a> {
    prob: &'a ProblemSpec,
    diffusion: DiffusionOperator,
}

impl<'a> QuadraticOperator<'a> {
    fn frozen_at(m: &ImageGrid, prob: &'a ProblemSpec, reg: &RegularizerSpec) -> Self {
        QuadraticOperator {
            prob,
            diffusion: DiffusionOperator::frozen_at(m, reg),
        }
    }

    fn apply(&self, v: &ImageGrid) -> ImageGrid {
        let lv = self.diffusion.apply(v);
        match self.prob.mode {
            ProblemMode::PureDiffusion => lv,
            ProblemMode::Tikhonov => {
                let mut out = self.prob.apply_jt(&self.prob.apply_j(v));
                out.axpy(self.prob.beta, &lv);
                out
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut d = self.diffusion.diagonal();
        if self.prob.mode == ProblemMode::Tikhonov {
            let jtj = self.prob.blur.as_ref().map_or(1.0, |tf| tf.normal_diagonal());
            for x in d.iter_mut() {
                *x = jtj + self.prob.beta * *x;
            }
        }
        d
    }
}

/// `v ↦ JᵀJv + β·L(m_frozen)v` (Tikhonov) or `L(m_frozen)v` (pure diffusion),
/// using the regularizer in effect at `m_frozen`. Huber only.
pub fn quadratic_apply(m_frozen: &ImageGrid, v: &ImageGrid, prob: &ProblemSpec) -> Result<ImageGrid> {
    m_frozen.ensure_same_side(&prob.data)?;
    v.ensure_same_side(&prob.data)?;
    if prob.reg.kind() != RegularizerKind::Huber {
        return Err(RestoreError::UnsupportedRegularizer);
    }
    let reg = prob.reg_at(m_frozen);
    Ok(QuadraticOperator::frozen_at(m_frozen, prob, &reg).apply(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Steepest descent: the Rayleigh quotient at the current iterate.
    Sd,
    /// Lagged steepest descent: the quotient from the previous iterate.
    Lsd,
    /// Half-lagged: recomputed on even steps, reused on the following odd step.
    Hlsd,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPolicy {
    kind: StepKind,
    fixed_tau: f64,
}

impl StepPolicy {
    pub fn sd() -> Self {
        StepPolicy {
            kind: StepKind::Sd,
            fixed_tau: 0.0,
        }
    }

    pub fn lsd() -> Self {
        StepPolicy {
            kind: StepKind::Lsd,
            fixed_tau: 0.0,
        }
    }

    pub fn hlsd() -> Self {
        StepPolicy {
            kind: StepKind::Hlsd,
            fixed_tau: 0.0,
        }
    }

    pub fn fixed(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(RestoreError::Parameter(format!(
                "fixed step must be finite and positive, got {tau}"
            )));
        }
        Ok(StepPolicy {
            kind: StepKind::Fixed,
            fixed_tau: tau,
        })
    }

    pub fn kind(&self) -> StepKind {
        self.kind
    }

    pub fn fixed_tau(&self) -> Option<f64> {
        (self.kind == StepKind::Fixed).then_some(self.fixed_tau)
    }
}

/// `sd`, `lsd`, `hlsd`, or `fixed:<tau>`.
impl FromStr for StepPolicy {
    type Err = RestoreError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "sd" => Ok(Self::sd()),
            "lsd" => Ok(Self::lsd()),
            "hlsd" => Ok(Self::hlsd()),
            _ => match lower.strip_prefix("fixed:") {
                Some(t) => Self::fixed(t.parse().map_err(|_| {
                    RestoreError::Parameter(format!("bad fixed step '{t}'"))
                })?),
                None => Err(RestoreError::Parameter(format!("unknown step policy '{s}'"))),
            },
        }
    }
}

impl fmt::Display for StepPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            StepKind::Sd => write!(f, "sd"),
            StepKind::Lsd => write!(f, "lsd"),
            StepKind::Hlsd => write!(f, "hlsd"),
            StepKind::Fixed => write!(f, "fixed:{}", self.fixed_tau),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    tol: f64,
    max_iters: usize,
}

impl StopRule {
    /// Stop once the relative change `eᵏ` drops to `tol`, or after `max_iters` steps.
    pub fn new(tol: f64, max_iters: usize) -> Result<Self> {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(RestoreError::Parameter(format!(
                "tolerance must be finite and positive, got {tol}"
            )));
        }
        if max_iters == 0 {
            return Err(RestoreError::Parameter("max_iters must be at least 1".into()));
        }
        Ok(StopRule { tol, max_iters })
    }

    /// Exactly `steps` steps unless the gradient vanishes first.
    pub fn fixed_steps(steps: usize) -> Self {
        StopRule {
            tol: 0.0,
            max_iters: steps,
        }
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn max_iters(&self) -> usize {
        self.max_iters
    }
}

/// One descent (or implicit) step. `k` counts from zero; `rel_err`, `misfit`
/// and `objective` describe the iterate produced by the step. `tau` is absent
/// for implicit steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub tau: Option<f64>,
    pub rel_err: f64,
    pub misfit: f64,
    pub objective: Option<f64>,
}

/// Iterate-dependent quantities carried between steps.
#[derive(Debug, Clone)]
pub struct DescentState {
    k: usize,
    iterate: ImageGrid,
    gradient: ImageGrid,
    reg: RegularizerSpec,
    previous_sd: Option<f64>,
    held: Option<f64>,
}

impl DescentState {
    /// State at step `k` with the gradient already evaluated at `iterate`.
    pub fn new(k: usize, iterate: ImageGrid, gradient: ImageGrid, reg: RegularizerSpec) -> Self {
        DescentState {
            k,
            iterate,
            gradient,
            reg,
            previous_sd: None,
            held: None,
        }
    }

    /// Moves to step `k` keeping the step-size history.
    pub fn advance(&mut self, k: usize, iterate: ImageGrid, gradient: ImageGrid, reg: RegularizerSpec) {
        self.k = k;
        self.iterate = iterate;
        self.gradient = gradient;
        self.reg = reg;
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn iterate(&self) -> &ImageGrid {
        &self.iterate
    }

    pub fn gradient(&self) -> &ImageGrid {
        &self.gradient
    }

    pub fn reg(&self) -> &RegularizerSpec {
        &self.reg
    }

    fn sd_quotient(&self, prob: &ProblemSpec) -> Result<f64> {
        let g = &self.gradient;
        let op = QuadraticOperator::frozen_at(&self.iterate, prob, &self.reg);
        let num = g.dot(g);
        let den = g.dot(&op.apply(g));
        if !(den > 0.0) || !den.is_finite() {
            return Err(RestoreError::NonPositiveCurvature(den));
        }
        Ok(num / den)
    }
}

/// Step size for the current state; updates the lagged/held history.
///
/// The first lagged step has no predecessor and uses the steepest-descent
/// quotient.
pub fn step_size(policy: &StepPolicy, state: &mut DescentState, prob: &ProblemSpec) -> Result<f64> {
    match policy.kind {
        StepKind::Fixed => Ok(policy.fixed_tau),
        StepKind::Sd => {
            let q = state.sd_quotient(prob)?;
            state.previous_sd = Some(q);
            Ok(q)
        }
        StepKind::Lsd => {
            let q = state.sd_quotient(prob)?;
            let tau = state.previous_sd.unwrap_or(q);
            state.previous_sd = Some(q);
            Ok(tau)
        }
        StepKind::Hlsd => match (state.k % 2, state.held) {
            (1, Some(q)) => Ok(q),
            _ => {
                let q = state.sd_quotient(prob)?;
                state.held = Some(q);
                Ok(q)
            }
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Relative change fell to the tolerance.
    Tolerance,
    /// The objective gradient vanished exactly.
    ZeroGradient,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct DescentOutcome {
    pub image: ImageGrid,
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
}

impl DescentOutcome {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn converged(&self) -> bool {
        self.stop != StopReason::MaxIterations
    }

    pub fn taus(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.tau).collect()
    }
}

/// Runs `m_{k+1} = m_k − τ_k·G(m_k)` from `m0`.
///
/// Under [`GammaRule::Adaptive`] the threshold is recomputed from `m_k` at the
/// start of each step and held for that step's gradient, step size and
/// recorded objective.
pub fn descent_run(
    prob: &ProblemSpec,
    policy: &StepPolicy,
    stop: &StopRule,
    m0: &ImageGrid,
) -> Result<DescentOutcome> {
    m0.ensure_same_side(&prob.data)?;
    let mut m = m0.clone();
    let mut records = Vec::new();
    let mut state: Option<DescentState> = None;
    let mut reason = StopReason::MaxIterations;

    for k in 0..stop.max_iters {
        let reg = prob.reg_at(&m);
        let g = gradient_with(&m, prob, &reg);
        if g.values().iter().all(|&x| x == 0.0) {
            reason = StopReason::ZeroGradient;
            break;
        }
        let st = match state.as_mut() {
            Some(st) => {
                st.advance(k, m.clone(), g, reg);
                st
            }
            None => state.insert(DescentState::new(k, m.clone(), g, reg)),
        };
        let tau = step_size(policy, st, prob)?;
        let mut next = m.clone();
        next.axpy(-tau, st.gradient());
        if !next.is_finite() {
            return Err(RestoreError::Diverged(k));
        }
        let rel_err = relative_error(&next, &m)?;
        records.push(IterationRecord {
            k,
            tau: Some(tau),
            rel_err,
            misfit: misfit(&next, &prob.data)?,
            objective: Some(objective_with(&next, prob, &reg)),
        });
        m = next;
        if rel_err <= stop.tol {
            reason = StopReason::Tolerance;
            break;
        }
    }

    Ok(DescentOutcome {
        image: m,
        records,
        stop: reason,
    })
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: ImageGrid,
    pub iterations: usize,
    /// Achieved `‖A x − rhs‖ / ‖rhs‖`.
    pub residual: f64,
}

/// Solves `A x = rhs` with `A` frozen at `m_frozen` by Jacobi-preconditioned
/// conjugate gradients, stopping at `‖A x − rhs‖ ≤ tol·‖rhs‖`.
pub fn cg_solve(
    m_frozen: &ImageGrid,
    prob: &ProblemSpec,
    rhs: &ImageGrid,
    guess: Option<&ImageGrid>,
    tol: f64,
    max_iters: usize,
) -> Result<CgOutcome> {
    m_frozen.ensure_same_side(&prob.data)?;
    rhs.ensure_same_side(&prob.data)?;
    if prob.reg.kind() != RegularizerKind::Huber {
        return Err(RestoreError::UnsupportedRegularizer);
    }
    let reg = prob.reg_at(m_frozen);
    let op = QuadraticOperator::frozen_at(m_frozen, prob, &reg);
    pcg(|v| op.apply(v), &op.diagonal(), rhs, guess, tol, max_iters)
}

fn pcg(
    apply: impl Fn(&ImageGrid) -> ImageGrid,
    diagonal: &[f64],
    rhs: &ImageGrid,
    guess: Option<&ImageGrid>,
    tol: f64,
    max_iters: usize,
) -> Result<CgOutcome> {
    let inv_diag: Vec<f64> = diagonal
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let precondition = |r: &ImageGrid| {
        r.with_values(r.values().iter().zip(&inv_diag).map(|(a, b)| a * b).collect())
    };

    let rhs_norm = rhs.norm();
    let mut x = match guess {
        Some(g) => g.clone(),
        None => ImageGrid::zeros(rhs.side())?,
    };
    if rhs_norm == 0.0 {
        return Ok(CgOutcome {
            solution: ImageGrid::zeros(rhs.side())?,
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut r = match guess {
        Some(_) => rhs.sub(&apply(&x)),
        None => rhs.clone(),
    };
    let mut rel = r.norm() / rhs_norm;
    if rel <= tol {
        return Ok(CgOutcome {
            solution: x,
            iterations: 0,
            residual: rel,
        });
    }
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for it in 1..=max_iters {
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(RestoreError::NonPositiveCurvature(pap));
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        rel = r.norm() / rhs_norm;
        if rel <= tol {
            return Ok(CgOutcome {
                solution: x,
                iterations: it,
                residual: rel,
            });
        }
        z = precondition(&r);
        let rz_next = r.dot(&z);
        let beta = rz_next / rz;
        rz = rz_next;
        let mut next_p = z.clone();
        next_p.axpy(beta, &p);
        p = next_p;
    }
    Err(RestoreError::CgNotConverged {
        iters: max_iters,
        residual: rel,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for CgSettings {
    fn default() -> Self {
        CgSettings {
            tol: CG_TOL,
            max_iters: CG_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IrlsOutcome {
    pub image: ImageGrid,
    pub records: Vec<IterationRecord>,
    pub cg_iterations: Vec<usize>,
}

/// Lagged diffusivity: for each outer step solve
/// `(JᵀJ + β·L(m_k)) m = Jᵀb` by CG warm-started at `m_k`.
pub fn irls_outer(
    prob: &ProblemSpec,
    m0: &ImageGrid,
    outer_iters: usize,
    cg: CgSettings,
) -> Result<IrlsOutcome> {
    m0.ensure_same_side(&prob.data)?;
    if prob.mode != ProblemMode::Tikhonov || !(prob.beta > 0.0) {
        return Err(RestoreError::Parameter(
            "lagged diffusivity needs a Tikhonov problem with beta > 0".into(),
        ));
    }
    if prob.reg.kind() != RegularizerKind::Huber {
        return Err(RestoreError::UnsupportedRegularizer);
    }
    let rhs = prob.apply_jt(&prob.data);
    let mut m = m0.clone();
    let mut records = Vec::with_capacity(outer_iters);
    let mut cg_iterations = Vec::with_capacity(outer_iters);
    for k in 0..outer_iters {
        let reg = prob.reg_at(&m);
        let op = QuadraticOperator::frozen_at(&m, prob, &reg);
        let out = pcg(|v| op.apply(v), &op.diagonal(), &rhs, Some(&m), cg.tol, cg.max_iters)?;
        if !out.solution.is_finite() {
            return Err(RestoreError::Diverged(k));
        }
        let rel_err = relative_error(&out.solution, &m)?;
        records.push(IterationRecord {
            k,
            tau: None,
            rel_err,
            misfit: misfit(&out.solution, &prob.data)?,
            objective: Some(objective_with(&out.solution, prob, &reg)),
        });
        cg_iterations.push(out.iterations);
        m = out.solution;
    }
    Ok(IrlsOutcome {
        image: m,
        records,
        cg_iterations,
    })
}
