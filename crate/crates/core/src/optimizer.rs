//! Constrained maximization of a memory norm `‖Θ_ca‖` over channel tensors,
//! and the least-squares feasibility search used by the constraint sampler.
//!
//! Each restart runs three phases:
//!
//! 1. penalty stages: L-BFGS on `−‖Θ_ca‖² + μ (isometry² + constraint²)` over
//!    the raw amplitudes, with `μ` following a fixed geometric schedule;
//! 2. projection: Levenberg–Marquardt on the isometry and constraint
//!    residuals, followed by undamped Gauss–Newton polishing;
//! 3. refinement: ascent along the tangent-projected gradient, each trial
//!    step re-projected onto the feasible set and kept only if it improves.
//!
//! The result of a restart is its best admissible point; across restarts the
//! highest memory wins, ties going to the lowest restart index.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{bound_for, build_saturating_diagonal, build_saturating_nondiagonal, ADMISSIBLE_TOL, SLACK_TOL};
use crate::channel::{check_isometry, random_isometry_channel, ChannelSpec};
use crate::constraints::{check_constraint, ConstraintError, ConstraintKind, TransferConstraint};
use crate::forms::{Layout, Residuals};
use crate::memory::memory_table;
use crate::qcore::{complex_gaussian, rng_from_seed};

type Vector = Vec<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Cost below which the Levenberg–Marquardt loop hands over to polishing.
const LM_COST_FLOOR: f64 = 1e-28;
const POLISH_STEPS: usize = 80;
const NEWTON_ITERS: usize = 200;
const STALL_WINDOW: usize = 10;
const PROJECTION_ITERS: usize = 200;
const REFINE_ITERS: usize = 150;
const REFINE_PROJECTION_ITERS: usize = 120;
/// Relative block norms tried, smallest first, when snapping leaks to zero.
const SNAP_LEVELS: [f64; 7] = [1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 3e-2];
/// A snapped point must be this feasible to replace the unsnapped one.
const SNAP_FEASIBLE_COST: f64 = 1e-26;
const SNAP_ROUNDS: usize = 4;
/// Memory a snapped optimizer candidate may give up against the raw one.
const SNAP_MEMORY_SLACK: f64 = 1e-6;
/// Squared-residual level a refinement trial must reach to be accepted.
const REFINE_FEASIBLE_COST: f64 = 1e-26;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Infeasibility {
    #[error("constraint is inconsistent by a dimension rule: {0}")]
    DimensionRule(String),
    #[error("no admissible point after {restarts} restarts (best residual {best_residual:e})")]
    RestartBudget { restarts: usize, best_residual: f64 },
}

#[derive(Debug, Error)]
pub enum OptError {
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error("infeasible: {0}")]
    Infeasible(#[from] Infeasibility),
    #[error("pair ({a}, {c}) out of range or diagonal for n = {n}")]
    InvalidPair { a: usize, c: usize, n: usize },
    #[error("empty grid")]
    EmptyGrid,
    #[error("bound violated: achieved {} > bound {:?}; channel:\n{}",
        .0.achieved, .0.bound, .0.channel.to_json())]
    BoundViolation(Box<OptResult>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub restarts: usize,
    /// L-BFGS iterations per restart, split evenly over the penalty stages.
    pub max_iters: usize,
    pub penalty_initial: f64,
    pub penalty_factor: f64,
    pub penalty_stages: usize,
    /// Convergence tolerance on the objective change.
    pub tol: f64,
    pub seed: u64,
    pub dc: usize,
    /// Use the known saturating construction (when one matches) as restart 0.
    pub warm_start: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            restarts: 32,
            max_iters: 2000,
            penalty_initial: 10.0,
            penalty_factor: 10.0,
            penalty_stages: 4,
            tol: 1e-10,
            seed: 0,
            dc: 1,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartTrace {
    pub restart: usize,
    pub seed: u64,
    pub warm_start: bool,
    /// Memory of the restart's best admissible point, if it found one.
    pub achieved: Option<f64>,
    pub isometry_residual: f64,
    pub constraint_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptResult {
    pub constraint: TransferConstraint,
    /// One-based element `(a, c)` whose memory was maximized.
    pub pair: (usize, usize),
    pub channel: ChannelSpec,
    pub achieved: f64,
    pub constraint_residual: f64,
    pub isometry_residual: f64,
    pub bound: Option<f64>,
    pub best_restart: usize,
    pub trace: Vec<RestartTrace>,
    pub config: OptimizerConfig,
}

impl OptResult {
    pub fn slack(&self) -> Option<f64> {
        self.bound.map(|b| b - self.achieved)
    }

    /// Best memory among restarts that did not start from a construction.
    pub fn best_cold(&self) -> Option<f64> {
        self.trace
            .iter()
            .filter(|t| !t.warm_start)
            .filter_map(|t| t.achieved)
            .reduce(f64::max)
    }

    pub fn warm(&self) -> Option<&RestartTrace> {
        self.trace.iter().find(|t| t.warm_start)
    }
}

/// Seed for restart `i` derived from the configured seed.
pub fn restart_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn dot(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

fn axpy(x: &[Complex64], t: f64, d: &[Complex64]) -> Vector {
    x.iter().zip(d).map(|(a, b)| a + b * t).collect()
}

fn to_real(v: &[Complex64]) -> DVector<f64> {
    DVector::from_iterator(2 * v.len(), v.iter().flat_map(|z| [z.re, z.im]))
}

fn from_real(v: &DVector<f64>) -> Vector {
    v.as_slice().chunks(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

/// Residuals and Jacobian with the columns of `frozen` amplitudes zeroed.
fn masked_jacobian(res: &Residuals, z: &[Complex64], frozen: &[bool]) -> (DVector<f64>, DMatrix<f64>) {
    let (r, mut jac) = res.jacobian(z);
    for (i, _) in frozen.iter().enumerate().filter(|(_, f)| **f) {
        jac.column_mut(2 * i).fill(0.0);
        jac.column_mut(2 * i + 1).fill(0.0);
    }
    (r, jac)
}

/// Solves `(A + shift·I) x = b` for symmetric positive semidefinite `A`.
fn solve_shifted(a: &DMatrix<f64>, shift: f64, b: &DVector<f64>) -> Option<DVector<f64>> {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += shift;
    }
    m.cholesky().map(|c| c.solve(b))
}

/// Damped Gauss–Newton step `−Jᵀ(JJᵀ + μI)⁻¹ r` (or the normal-equation form
/// when that system is smaller).
fn gauss_newton_step(r: &DVector<f64>, jac: &DMatrix<f64>, lambda: f64) -> Option<DVector<f64>> {
    let (m, p) = jac.shape();
    if m <= p {
        let jjt = jac * jac.transpose();
        let scale = (jjt.trace() / m as f64).max(1e-300);
        let y = solve_shifted(&jjt, lambda * scale, r)?;
        Some(-(jac.transpose() * y))
    } else {
        let jtj = jac.transpose() * jac;
        let scale = (jtj.trace() / p as f64).max(1e-300);
        let y = solve_shifted(&jtj, lambda * scale, &(jac.transpose() * r))?;
        Some(-y)
    }
}

/// Undamped step `−J⁺ r` through a truncated SVD. Damping would stall the
/// amplitudes whose Jacobian columns shrink with the amplitudes themselves.
fn min_norm_step(r: &DVector<f64>, jac: &DMatrix<f64>) -> Option<DVector<f64>> {
    if !jac.iter().chain(r.iter()).all(|v| v.is_finite()) {
        return None;
    }
    let svd = jac.clone().svd_unordered(true, true);
    if !svd.singular_values.iter().all(|v| v.is_finite()) {
        return None;
    }
    let cutoff = svd.singular_values.max() * 1e-13;
    svd.solve(r, cutoff).ok().map(|x| -x)
}

/// Damped Newton on `½ Σ|e|²` with the exact Hessian. Where the solution set
/// is a degenerate extremum (a single equation pinning a quantity at its
/// maximum), Gauss–Newton converges sublinearly; here the error shrinks by a
/// constant factor per step, and trying longer steps along the Newton
/// direction recovers the quartic directions in one go.
fn newton(res: &Residuals, mut z: Vector, max_iters: usize, frozen: &[bool]) -> Vector {
    let mut cost = res.sum_sq(&z);
    let mut mu = 1e-6;
    for _ in 0..max_iters {
        if cost <= LM_COST_FLOOR {
            break;
        }
        let (r, jac) = masked_jacobian(res, &z, frozen);
        let mut hess = jac.transpose() * &jac + res.curvature(&z);
        for (i, _) in frozen.iter().enumerate().filter(|(_, f)| **f) {
            for j in [2 * i, 2 * i + 1] {
                hess.row_mut(j).fill(0.0);
                hess.column_mut(j).fill(0.0);
            }
        }
        let grad = jac.transpose() * r;
        let scale = (hess.trace().abs() / hess.nrows() as f64).max(1e-300);
        let Some(step) = solve_shifted(&hess, mu * scale, &grad).map(|s| from_real(&-s)) else {
            mu *= 10.0;
            if mu > 1e6 {
                break;
            }
            continue;
        };
        let best = [1.0, 1.5, 2.0, 3.0]
            .into_iter()
            .map(|t| {
                let trial = axpy(&z, t, &step);
                (res.sum_sq(&trial), trial)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("nonempty");
        if best.0 < cost {
            let gain = cost - best.0;
            z = best.1;
            cost = best.0;
            mu = (mu / 10.0).max(1e-15);
            if gain <= 1e-6 * cost && cost <= 1e-24 {
                break;
            }
        } else {
            mu *= 10.0;
            if mu > 1e6 {
                break;
            }
        }
    }
    z
}

/// Levenberg–Marquardt on `res`, then undamped polishing steps. Polishing
/// matters for constraints whose residuals are sums of squares of amplitudes
/// that must vanish: there Gauss–Newton halves those amplitudes each step,
/// long after the total cost has reached rounding level.
fn least_squares(res: &Residuals, z: Vector, max_iters: usize) -> Vector {
    let frozen = vec![false; z.len()];
    least_squares_masked(res, z, max_iters, &frozen)
}

/// [`least_squares`] with the `frozen` amplitudes held fixed.
fn least_squares_masked(res: &Residuals, mut z: Vector, max_iters: usize, frozen: &[bool]) -> Vector {
    if res.is_empty() {
        return z;
    }
    let (mut r, mut jac) = masked_jacobian(res, &z, frozen);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    // cost STALL_WINDOW iterations ago; LM hands over once it stops halving
    let mut history = VecDeque::with_capacity(STALL_WINDOW + 1);
    for _ in 0..max_iters {
        if cost <= LM_COST_FLOOR {
            break;
        }
        history.push_back(cost);
        if history.len() > STALL_WINDOW {
            let old = history.pop_front().expect("nonempty");
            if cost > 0.5 * old {
                break;
            }
        }
        let Some(step) = gauss_newton_step(&r, &jac, lambda) else {
            lambda *= 10.0;
            continue;
        };
        let trial = axpy(&z, 1.0, &from_real(&step));
        let trial_cost = res.sum_sq(&trial);
        if trial_cost < cost {
            z = trial;
            (r, jac) = masked_jacobian(res, &z, frozen);
            cost = r.norm_squared();
            lambda = (lambda / 10.0).max(1e-15);
        } else {
            lambda *= 10.0;
            if lambda > 1e10 {
                break;
            }
        }
    }
    if cost > LM_COST_FLOOR {
        z = newton(res, z, NEWTON_ITERS, frozen);
        (r, jac) = masked_jacobian(res, &z, frozen);
        cost = r.norm_squared();
    }
    for _ in 0..POLISH_STEPS {
        let Some(step) = min_norm_step(&r, &jac) else {
            break;
        };
        if step.amax() < 1e-300 {
            break;
        }
        let trial = axpy(&z, 1.0, &from_real(&step));
        let trial_cost = res.sum_sq(&trial);
        if trial_cost.is_nan() || trial_cost > 4.0 * cost.max(1e-32) {
            break;
        }
        z = trial;
        (r, jac) = masked_jacobian(res, &z, frozen);
        cost = trial_cost;
    }
    z
}

/// Moves `z` onto the set where the isometry and `constraint` residuals
/// vanish, preferring a point whose negligible blocks are exactly zero.
pub fn project_feasible(lay: &Layout, constraint: &Residuals, z: Vector, max_iters: usize) -> Vector {
    let mut res = lay.isometry();
    res.extend(constraint.clone());
    let z = least_squares(&res, z, max_iters);
    snap_blocks(&res, &z, lay.dc, max_iters).unwrap_or(z)
}

/// Minimal L-BFGS with Armijo backtracking; `f` returns the value and writes
/// the packed gradient.
fn lbfgs(f: impl Fn(&[Complex64], &mut [Complex64]) -> f64, mut x: Vector, max_iters: usize, tol: f64) -> Vector {
    const MEMORY: usize = 8;
    let mut g = vec![ZERO; x.len()];
    let mut fx = f(&x, &mut g);
    let mut hist: VecDeque<(Vector, Vector, f64)> = VecDeque::with_capacity(MEMORY);
    let mut g_new = vec![ZERO; x.len()];
    for _ in 0..max_iters {
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= yi * a);
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += si * (a - b));
        }
        let mut d: Vector = q.iter().map(|v| -v).collect();
        let mut slope = dot(&d, &g);
        if slope >= 0.0 {
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            hist.clear();
        }
        if slope.abs() < 1e-30 {
            break;
        }
        let mut t = 1.0;
        let (x_new, f_new) = loop {
            let xt = axpy(&x, t, &d);
            let ft = f(&xt, &mut g_new);
            if ft <= fx + 1e-4 * t * slope {
                break (xt, ft);
            }
            t *= 0.5;
            if t < 1e-20 {
                return x;
            }
        };
        let s: Vector = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vector = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if hist.len() == MEMORY {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let change = (fx - f_new).abs();
        x = x_new;
        fx = f_new;
        std::mem::swap(&mut g, &mut g_new);
        if change <= tol * (1.0 + fx.abs()) {
            break;
        }
    }
    x
}

struct Problem {
    lay: Layout,
    /// isometry followed by constraint residuals
    feasibility: Residuals,
    objective: Residuals,
}

impl Problem {
    fn new(tc: &TransferConstraint, a: usize, c: usize, dc: usize) -> Problem {
        let lay = Layout { n: tc.n(), dc };
        let mut feasibility = lay.isometry();
        feasibility.extend(tc.residuals(dc));
        Problem {
            lay,
            feasibility,
            objective: lay.memory(a, c),
        }
    }

    /// `−‖Θ‖² + μ · Σ residual²` and its packed gradient.
    fn penalized(&self, z: &[Complex64], mu: f64, g: &mut [Complex64]) -> f64 {
        g.iter_mut().for_each(|v| *v = ZERO);
        self.objective.add_gradient(z, -1.0, g);
        self.feasibility.add_gradient(z, mu, g);
        -self.objective.sum_sq(z) + mu * self.feasibility.sum_sq(z)
    }

    fn objective_gradient(&self, z: &[Complex64]) -> Vector {
        let mut g = vec![ZERO; z.len()];
        self.objective.add_gradient(z, 1.0, &mut g);
        g
    }

    /// Gradient with the components along the constraint normals removed.
    fn tangent_direction(&self, z: &[Complex64]) -> Vector {
        let g = to_real(&self.objective_gradient(z));
        let (_, jac) = self.feasibility.jacobian(z);
        let jjt = &jac * jac.transpose();
        let scale = (jjt.trace() / jjt.nrows() as f64).max(1e-300);
        match solve_shifted(&jjt, 1e-10 * scale, &(&jac * &g)) {
            Some(y) => from_real(&(g - jac.transpose() * y)),
            None => from_real(&g),
        }
    }

    fn refine(&self, mut z: Vector, tol: f64) -> Vector {
        let mut f = self.objective.sum_sq(&z);
        let mut step = 1e-2;
        let mut stalls = 0;
        for _ in 0..REFINE_ITERS {
            let d = self.tangent_direction(&z);
            let norm = dot(&d, &d).sqrt();
            if norm < 1e-14 {
                break;
            }
            let trial = least_squares(&self.feasibility, axpy(&z, step / norm, &d), REFINE_PROJECTION_ITERS);
            let f_trial = self.objective.sum_sq(&trial);
            if self.feasibility.sum_sq(&trial) <= REFINE_FEASIBLE_COST && f_trial > f {
                stalls = if f_trial - f <= tol * (1.0 + f) { stalls + 1 } else { 0 };
                z = trial;
                f = f_trial;
                step = (step * 2.0).min(0.5);
                if stalls >= 3 {
                    break;
                }
            } else {
                step *= 0.3;
                if step < 1e-9 {
                    break;
                }
            }
        }
        z
    }
}

struct Candidate {
    channel: ChannelSpec,
    achieved: f64,
    isometry_residual: f64,
    constraint_residual: f64,
}

impl Candidate {
    fn evaluate(tc: &TransferConstraint, channel: ChannelSpec, a: usize, c: usize) -> Candidate {
        let isometry_residual = check_isometry(&channel).max();
        let constraint_residual = check_constraint(&channel, tc).expect("dimensions checked");
        let achieved = memory_table(&channel).entry(a, c);
        Candidate {
            channel,
            achieved,
            isometry_residual,
            constraint_residual,
        }
    }

    fn admissible(&self) -> bool {
        self.isometry_residual <= ADMISSIBLE_TOL && self.constraint_residual <= ADMISSIBLE_TOL
    }
}

/// Zeroes whole ancilla blocks `c^p_kl` whose norm falls below a relative
/// level, then projects the remaining amplitudes with those held at zero.
/// Levels are tried smallest first and the first projection that becomes
/// feasible to rounding wins; rounds repeat with earlier blocks kept frozen,
/// since zeroing one leak can hide the next one from the residuals.
/// Degenerate constraints leave leaks far above rounding (a residual δ
/// admits leaks of order δ^¼ when the solution sits on the boundary of a
/// positivity cone) that no residual can see; a leak that is genuine keeps
/// the snapped projection infeasible and is left alone.
fn snap_blocks(res: &Residuals, z: &[Complex64], dc: usize, max_iters: usize) -> Option<Vector> {
    let block_count = z.len() / dc;
    let mut frozen_blocks = vec![false; block_count];
    let mut current: Option<Vector> = None;
    for _ in 0..SNAP_ROUNDS {
        let z = current.as_deref().unwrap_or(z);
        let norms: Vec<f64> = z.chunks(dc).map(|b| b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()).collect();
        let max = norms.iter().copied().fold(0.0, f64::max);
        let mut last = frozen_blocks.clone();
        let mut advanced = false;
        for level in SNAP_LEVELS {
            let small: Vec<bool> = norms.iter().zip(&frozen_blocks).map(|(&v, &f)| f || v <= level * max).collect();
            if small == last {
                continue;
            }
            let frozen: Vec<bool> = small.iter().flat_map(|&f| std::iter::repeat_n(f, dc)).collect();
            let start: Vector = z.iter().zip(&frozen).map(|(v, &f)| if f { ZERO } else { *v }).collect();
            let projected = least_squares_masked(res, start, max_iters, &frozen);
            if res.sum_sq(&projected) <= SNAP_FEASIBLE_COST {
                frozen_blocks = small;
                current = Some(projected);
                advanced = true;
                break;
            }
            last = small;
        }
        if !advanced {
            break;
        }
    }
    current
}

/// Saturating construction relabelled onto the constrained elements, when
/// one is known for this constraint kind.
pub fn warm_start_channel(tc: &TransferConstraint, a: usize, c: usize, dc: usize) -> Option<ChannelSpec> {
    let n = tc.n();
    let perm_with = |front: &[usize]| {
        let mut perm = front.to_vec();
        perm.extend((0..n).filter(|i| !front.contains(i)));
        perm
    };
    let ch = match tc.kind() {
        ConstraintKind::DiagonalNonIdeal { pairs } if pairs.len() == 2 && n >= 3 => {
            let ((u, eu), (v, ev)) = (pairs[0], pairs[1]);
            let w = [a, c]
                .into_iter()
                .find(|i| *i != u && *i != v)
                .or_else(|| (0..n).find(|i| *i != u && *i != v))?;
            build_saturating_diagonal(n, eu, ev).ok()?.relabel(&perm_with(&[u, v, w]))
        }
        ConstraintKind::NondiagonalNonIdeal { a: x, b: y, eps } => {
            build_saturating_nondiagonal(n, *eps).ok()?.relabel(&perm_with(&[*x, *y]))
        }
        _ => return None,
    };
    Some(ch.with_ancilla_dim(dc))
}

fn run_restart(
    problem: &Problem,
    tc: &TransferConstraint,
    start: ChannelSpec,
    (a, c): (usize, usize),
    cfg: &OptimizerConfig,
) -> Option<Candidate> {
    let (n, dc) = (problem.lay.n, problem.lay.dc);
    let mut best: Option<Candidate> = None;
    let mut consider = |cand: Candidate| {
        if cand.admissible() && best.as_ref().is_none_or(|b| cand.achieved > b.achieved) {
            best = Some(cand);
        }
    };
    let initial = Candidate::evaluate(tc, start.clone(), a, c);
    consider(initial);

    let mut z = start.amplitudes().to_vec();
    let stages = cfg.penalty_stages.max(1);
    let per_stage = cfg.max_iters / stages;
    let mut mu = cfg.penalty_initial;
    for _ in 0..stages {
        z = lbfgs(|x, g| problem.penalized(x, mu, g), z, per_stage, cfg.tol);
        mu *= cfg.penalty_factor;
    }
    z = least_squares(&problem.feasibility, z, PROJECTION_ITERS);
    z = problem.refine(z, cfg.tol);

    let finish = |z: Vector| {
        let ch = ChannelSpec::new(n, dc, z).expect("layout preserved");
        let ch = ch.orthonormalized().unwrap_or(ch);
        Candidate::evaluate(tc, ch, a, c)
    };
    let snapped = snap_blocks(&problem.feasibility, &z, dc, PROJECTION_ITERS)
        .map(finish)
        .filter(Candidate::admissible);
    let raw = finish(z);
    match snapped {
        // raw leaks can overstate the memory by about √(rounding)
        Some(s) if raw.achieved <= s.achieved + SNAP_MEMORY_SLACK => consider(s),
        _ => consider(raw),
    }
    best
}

/// Maximizes the memory on `λ_ac` (zero-based pair) over channels with
/// ancilla dimension `cfg.dc` that satisfy `tc`.
pub fn maximize_memory(
    tc: &TransferConstraint,
    pair: (usize, usize),
    cfg: &OptimizerConfig,
) -> Result<OptResult, OptError> {
    let n = tc.n();
    let (a, c) = pair;
    if a >= n || c >= n || a == c {
        return Err(OptError::InvalidPair { a: a + 1, c: c + 1, n });
    }
    if let Some(reason) = tc.dimension_rule() {
        return Err(Infeasibility::DimensionRule(reason).into());
    }
    let problem = Problem::new(tc, a, c, cfg.dc);
    let warm = if cfg.warm_start { warm_start_channel(tc, a, c, cfg.dc) } else { None };
    let starts: Vec<(usize, u64, bool)> = (0..cfg.restarts)
        .map(|i| (i, restart_seed(cfg.seed, i), i == 0 && warm.is_some()))
        .collect();

    let outcomes: Vec<(RestartTrace, Option<Candidate>)> = starts
        .par_iter()
        .map(|&(i, seed, is_warm)| {
            let start = match (&warm, is_warm) {
                (Some(w), true) => w.clone(),
                _ => random_isometry_channel(n, cfg.dc, seed).expect("random isometry draw"),
            };
            let best = run_restart(&problem, tc, start, pair, cfg);
            let trace = RestartTrace {
                restart: i,
                seed,
                warm_start: is_warm,
                achieved: best.as_ref().map(|b| b.achieved),
                isometry_residual: best.as_ref().map_or(f64::NAN, |b| b.isometry_residual),
                constraint_residual: best.as_ref().map_or(f64::NAN, |b| b.constraint_residual),
            };
            (trace, best)
        })
        .collect();

    let mut trace = Vec::with_capacity(outcomes.len());
    let mut winner: Option<(usize, Candidate)> = None;
    for (t, cand) in outcomes {
        let index = t.restart;
        trace.push(t);
        if let Some(cand) = cand {
            let better = winner
                .as_ref()
                .is_none_or(|(_, w)| cand.achieved > w.achieved + 1e-12);
            if better {
                winner = Some((index, cand));
            }
        }
    }
    let Some((best_restart, best)) = winner else {
        let best_residual = trace
            .iter()
            .map(|t| t.isometry_residual.max(t.constraint_residual))
            .filter(|r| r.is_finite())
            .fold(f64::INFINITY, f64::min);
        return Err(Infeasibility::RestartBudget {
            restarts: cfg.restarts,
            best_residual,
        }
        .into());
    };
    let result = OptResult {
        constraint: tc.clone(),
        pair: (a + 1, c + 1),
        bound: bound_for(tc, a, c, cfg.dc),
        channel: best.channel,
        achieved: best.achieved,
        constraint_residual: best.constraint_residual,
        isometry_residual: best.isometry_residual,
        best_restart,
        trace,
        config: *cfg,
    };
    if result.slack().is_some_and(|s| s < -SLACK_TOL) {
        return Err(OptError::BoundViolation(Box::new(result)));
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheckReport {
    pub points: usize,
    pub penalty: f64,
    /// max over points of ‖g_fd − g‖∞ / ‖g‖∞
    pub max_rel_dev: f64,
    /// Directional derivative along the zero vector.
    pub zero_direction_derivative: f64,
}

/// Compares the analytic gradient of the penalized objective (first penalty
/// stage) with central finite differences at the given points.
pub fn gradient_check(
    tc: &TransferConstraint,
    pair: (usize, usize),
    cfg: &OptimizerConfig,
    points: &[Vector],
) -> GradientCheckReport {
    let problem = Problem::new(tc, pair.0, pair.1, cfg.dc);
    let mu = cfg.penalty_initial;
    let h = 1e-6;
    let mut scratch = vec![ZERO; problem.lay.len()];
    let mut f = |z: &[Complex64]| problem.penalized(z, mu, &mut scratch);
    let mut worst = 0.0f64;
    let mut zero_dir = 0.0f64;
    for z in points {
        let mut g = vec![ZERO; z.len()];
        problem.penalized(z, mu, &mut g);
        let mut dev = 0.0f64;
        for j in 0..z.len() {
            for unit in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[j] += unit * h;
                zm[j] -= unit * h;
                let fd = (f(&zp) - f(&zm)) / (2.0 * h);
                let an = if unit.re == 1.0 { g[j].re } else { g[j].im };
                dev = dev.max((fd - an).abs());
            }
        }
        let gmax = g.iter().map(|v| v.re.abs().max(v.im.abs())).fold(0.0, f64::max);
        worst = worst.max(dev / gmax.max(1e-300));
        let zero = vec![ZERO; z.len()];
        zero_dir = zero_dir.max(dot(&g, &zero).abs());
        let f0 = f(z);
        zero_dir = zero_dir.max(((f(&axpy(z, h, &zero)) - f0) / h).abs());
    }
    GradientCheckReport {
        points: points.len(),
        penalty: mu,
        max_rel_dev: worst,
        zero_direction_derivative: zero_dir,
    }
}

/// `count` random points near random isometries, seeded from `cfg.seed`.
pub fn random_points(n: usize, cfg: &OptimizerConfig, count: usize) -> Vec<Vector> {
    let mut rng = rng_from_seed(cfg.seed);
    (0..count)
        .map(|i| {
            let ch = random_isometry_channel(n, cfg.dc, restart_seed(cfg.seed, i)).expect("draw");
            ch.amplitudes()
                .iter()
                .map(|z| z + complex_gaussian(&mut rng) * 0.1)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub achieved: f64,
    pub bound: Option<f64>,
    pub slack: Option<f64>,
    pub warm_achieved: Option<f64>,
    pub best_cold: Option<f64>,
    pub constraint_residual: f64,
    pub isometry_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub pair: (usize, usize),
    pub rows: Vec<SweepRow>,
    /// achieved memory is non-increasing in ε (within 1e-9)
    pub monotone: bool,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
        let mut out = String::from("eps,achieved,bound,slack,warm_achieved,best_cold,constraint_residual,isometry_residual\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:e},{},{},{},{},{:e},{:e}\n",
                r.eps,
                r.achieved,
                opt(r.bound),
                opt(r.slack),
                opt(r.warm_achieved),
                opt(r.best_cold),
                r.constraint_residual,
                r.isometry_residual
            ));
        }
        out
    }
}

/// One [`maximize_memory`] run per ε, rows sorted by ε.
pub fn sweep(
    template: impl Fn(f64) -> Result<TransferConstraint, ConstraintError>,
    grid: &[f64],
    pair: (usize, usize),
    cfg: &OptimizerConfig,
) -> Result<SweepTable, OptError> {
    if grid.is_empty() {
        return Err(OptError::EmptyGrid);
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(grid.len());
    for eps in grid {
        let tc = template(eps)?;
        let res = maximize_memory(&tc, pair, cfg)?;
        rows.push(SweepRow {
            eps,
            achieved: res.achieved,
            bound: res.bound,
            slack: res.slack(),
            warm_achieved: res.warm().and_then(|w| w.achieved),
            best_cold: res.best_cold(),
            constraint_residual: res.constraint_residual,
            isometry_residual: res.isometry_residual,
        });
    }
    let monotone = rows.windows(2).all(|w| w[1].achieved <= w[0].achieved + 1e-9);
    Ok(SweepTable {
        pair: (pair.0 + 1, pair.1 + 1),
        rows,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::structural_zero_report;

    fn quick() -> OptimizerConfig {
        OptimizerConfig {
            restarts: 4,
            max_iters: 400,
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn projection_snaps_degenerate_zeros() {
        let tc = TransferConstraint::new(3, ConstraintKind::DiagonalIdeal { a: 0 }).unwrap();
        let lay = Layout { n: 3, dc: 2 };
        let start = random_isometry_channel(3, 2, 21).unwrap();
        let z = project_feasible(&lay, &tc.residuals(2), start.amplitudes().to_vec(), 500);
        let ch = ChannelSpec::new(3, 2, z).unwrap();
        assert!(check_constraint(&ch, &tc).unwrap() < 1e-14);
        let m = memory_table(&ch).entry(0, 1);
        let zeros = structural_zero_report(&ch, &tc).unwrap().max_norm();
        assert!(m < 1e-12 && zeros < 1e-12, "{m:e} {zeros:e}");
    }

    #[test]
    fn ideal_diagonal_forces_zero_memory() {
        let tc = TransferConstraint::new(2, ConstraintKind::DiagonalIdeal { a: 0 }).unwrap();
        let res = maximize_memory(&tc, (0, 1), &quick()).unwrap();
        assert!(res.achieved <= 1e-7, "{}", res.achieved);
        assert_eq!(res.bound, Some(0.0));
    }

    #[test]
    fn nondiagonal_bound_is_reached() {
        let tc = TransferConstraint::new(2, ConstraintKind::NondiagonalNonIdeal { a: 0, b: 1, eps: 0.6 }).unwrap();
        let res = maximize_memory(&tc, (0, 1), &quick()).unwrap();
        assert!(res.achieved >= 0.799 && res.achieved <= 0.8 + 1e-8, "{}", res.achieved);
        assert!(res.constraint_residual <= 1e-8 && res.isometry_residual <= 1e-8);
    }

    #[test]
    fn determinism() {
        let tc = TransferConstraint::new(3, ConstraintKind::DiagonalNonIdeal { pairs: vec![(0, 0.5), (1, 0.5)] }).unwrap();
        let cfg = OptimizerConfig { restarts: 2, max_iters: 200, seed: 5, ..OptimizerConfig::default() };
        let a = maximize_memory(&tc, (0, 1), &cfg).unwrap();
        let b = maximize_memory(&tc, (0, 1), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn warm_start_relabels_onto_constrained_elements() {
        let tc = TransferConstraint::new(4, ConstraintKind::DiagonalNonIdeal { pairs: vec![(2, 0.3), (0, 0.6)] }).unwrap();
        let ch = warm_start_channel(&tc, 2, 3, 2).unwrap();
        assert_eq!(ch.dc(), 2);
        assert!(check_constraint(&ch, &tc).unwrap() < 1e-15);
        let t = memory_table(&ch);
        assert!((t.entry(2, 0) - (0.7f64 * 0.4).sqrt()).abs() < 1e-12);
        assert!((t.entry(2, 3) - 0.7f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let tc = TransferConstraint::new(2, ConstraintKind::NondiagonalNonIdeal { a: 0, b: 1, eps: 0.5 }).unwrap();
        let cfg = OptimizerConfig { seed: 3, ..OptimizerConfig::default() };
        let pts = random_points(2, &cfg, 10);
        let rep = gradient_check(&tc, (0, 1), &cfg, &pts);
        assert!(rep.max_rel_dev <= 1e-5, "{rep:?}");
        assert_eq!(rep.zero_direction_derivative, 0.0);
        assert_eq!(rep, gradient_check(&tc, (0, 1), &cfg, &random_points(2, &cfg, 10)));
    }

    #[test]
    fn invalid_pair_and_dimension_rule() {
        let tc = TransferConstraint::new(2, ConstraintKind::DiagonalNonIdeal { pairs: vec![(0, 0.5), (1, 0.5)] }).unwrap();
        assert!(matches!(maximize_memory(&tc, (0, 1), &quick()), Err(OptError::Infeasible(Infeasibility::DimensionRule(_)))));
        assert!(matches!(maximize_memory(&tc, (1, 1), &quick()), Err(OptError::InvalidPair { .. })));
    }
}
