//! Transfer constraints: which elements of `r̃` must reproduce (or attenuate)
//! elements of the unknown `λ`, how far a channel is from satisfying them,
//! and a sampler for channels that do.
//!
//! Indices are zero-based in the library; the JSON form is one-based.
//!
//! Since λ → r̃ is linear and density matrices span all matrices, a constraint
//! that must hold "for every λ" is equivalent to conditions on the
//! coefficients `t[a][b][p][r]` of the [`TransferTensor`]. The two-state kinds
//! only constrain the two given states.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{target_map, transfer_tensor, ChannelSpec, TransferTensor};
use crate::forms::{Form, Layout, Residuals};
use crate::optimizer::{self, Infeasibility};
use crate::qcore::DensityMatrix;
use crate::scenarios::{castro_conditions, ScenarioError};

/// Residual needed before structural zeros are examined.
pub const STRUCTURAL_PRECONDITION_TOL: f64 = 1e-8;
/// Largest admissible norm of a block that must vanish.
pub const STRUCTURAL_ZERO_TOL: f64 = 1e-7;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error("index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("transferred elements must be off-diagonal, got a = b = {0}")]
    SameIndex(usize),
    #[error("duplicate transferred element {0}")]
    DuplicateElement(usize),
    #[error("non-ideality {0} outside (0, 1]")]
    EpsilonOutOfRange(f64),
    #[error("a non-ideal diagonal constraint needs at least one element")]
    Empty,
    #[error("two-state constraints need n = 2 and 2x2 states")]
    TwoStateDimension,
    #[error(transparent)]
    TwoState(#[from] ScenarioError),
    #[error("dimension mismatch: channel n = {channel}, constraint n = {constraint}")]
    DimensionMismatch { channel: usize, constraint: usize },
    #[error("constraint residual {residual:e} exceeds {STRUCTURAL_PRECONDITION_TOL:e}")]
    ConstraintNotSatisfied { residual: f64 },
    #[error("infeasible: {0}")]
    Infeasible(#[from] Infeasibility),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintKind {
    /// `r̃_aa = λ_aa`
    DiagonalIdeal { a: usize },
    /// `r̃_uu = ε_u λ_uu` for every listed `(u, ε_u)`
    DiagonalNonIdeal { pairs: Vec<(usize, f64)> },
    /// `r̃_ab = λ_ab`
    NondiagonalIdeal { a: usize, b: usize },
    /// `r̃_ab = ε λ_ab`
    NondiagonalNonIdeal { a: usize, b: usize, eps: f64 },
    /// `Re r̃_ab = Re λ_ab` for Hermitian λ
    RealPartIdeal { a: usize, b: usize },
    /// `r̃_aa = λ_aa` for λ ∈ {ρ, χ} only
    TwoStateDiagonal {
        rho: DensityMatrix,
        chi: DensityMatrix,
        a: usize,
    },
    /// `r̃_ab = λ_ab` for λ ∈ {ρ, χ} only
    TwoStateNondiagonal {
        rho: DensityMatrix,
        chi: DensityMatrix,
        a: usize,
        b: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConstraintFile", into = "ConstraintFile")]
pub struct TransferConstraint {
    n: usize,
    kind: ConstraintKind,
}

impl TransferConstraint {
    pub fn new(n: usize, kind: ConstraintKind) -> Result<Self, ConstraintError> {
        let idx = |i: usize| {
            if i < n {
                Ok(())
            } else {
                Err(ConstraintError::IndexOutOfRange { index: i, n })
            }
        };
        let pair = |a: usize, b: usize| {
            idx(a)?;
            idx(b)?;
            if a == b {
                Err(ConstraintError::SameIndex(a))
            } else {
                Ok(())
            }
        };
        let eps_ok = |e: f64| {
            if e > 0.0 && e <= 1.0 {
                Ok(())
            } else {
                Err(ConstraintError::EpsilonOutOfRange(e))
            }
        };
        let two_state = |rho: &DensityMatrix, chi: &DensityMatrix| {
            if n != 2 || rho.dim() != 2 || chi.dim() != 2 {
                return Err(ConstraintError::TwoStateDimension);
            }
            castro_conditions(rho, chi)?;
            Ok(())
        };
        match &kind {
            ConstraintKind::DiagonalIdeal { a } => idx(*a)?,
            ConstraintKind::DiagonalNonIdeal { pairs } => {
                if pairs.is_empty() {
                    return Err(ConstraintError::Empty);
                }
                for (i, &(u, e)) in pairs.iter().enumerate() {
                    idx(u)?;
                    eps_ok(e)?;
                    if pairs[..i].iter().any(|&(v, _)| v == u) {
                        return Err(ConstraintError::DuplicateElement(u));
                    }
                }
            }
            ConstraintKind::NondiagonalIdeal { a, b } | ConstraintKind::RealPartIdeal { a, b } => {
                pair(*a, *b)?
            }
            ConstraintKind::NondiagonalNonIdeal { a, b, eps } => {
                pair(*a, *b)?;
                eps_ok(*eps)?;
            }
            ConstraintKind::TwoStateDiagonal { rho, chi, a } => {
                idx(*a)?;
                two_state(rho, chi)?;
            }
            ConstraintKind::TwoStateNondiagonal { rho, chi, a, b } => {
                pair(*a, *b)?;
                two_state(rho, chi)?;
            }
        }
        Ok(TransferConstraint { n, kind })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &ConstraintKind {
        &self.kind
    }

    /// Reason why no channel can satisfy this constraint, if one follows from
    /// dimension counting alone. Attenuating every diagonal element with some
    /// `ε_u < 1` contradicts `tr r̃ = 1`.
    pub fn dimension_rule(&self) -> Option<String> {
        match &self.kind {
            ConstraintKind::DiagonalNonIdeal { pairs }
                if pairs.len() == self.n && pairs.iter().any(|&(_, e)| e < 1.0) =>
            {
                Some(format!(
                    "all {} diagonal elements attenuated with some eps < 1 violates trace conservation of r~",
                    self.n
                ))
            }
            _ => None,
        }
    }

    /// The residual family whose entries vanish exactly when the constraint
    /// holds; `max |entry|` equals [`check_constraint`].
    pub fn residuals(&self, dc: usize) -> Residuals {
        let lay = Layout { n: self.n, dc };
        let n = self.n;
        let mut res = Residuals::default();
        let delta = |x: bool, v: f64| if x { Complex64::new(v, 0.0) } else { ZERO };
        let coefficient_block = |res: &mut Residuals, a: usize, b: usize, scale: f64| {
            for p in 0..n {
                for r in 0..n {
                    res.push(lay.transfer(a, b, p, r), delta(p == a && r == b, scale));
                }
            }
        };
        match &self.kind {
            ConstraintKind::DiagonalIdeal { a } => coefficient_block(&mut res, *a, *a, 1.0),
            ConstraintKind::DiagonalNonIdeal { pairs } => {
                for &(u, e) in pairs {
                    coefficient_block(&mut res, u, u, e);
                }
            }
            ConstraintKind::NondiagonalIdeal { a, b } => coefficient_block(&mut res, *a, *b, 1.0),
            ConstraintKind::NondiagonalNonIdeal { a, b, eps } => {
                coefficient_block(&mut res, *a, *b, *eps)
            }
            ConstraintKind::RealPartIdeal { a, b } => {
                // Re r̃_ab = ½ Σ λ_pr (t_ab + t_ba)[p][r]; the symmetrized block is
                // Hermitian in (p, r), so it is fixed by its action on Hermitian λ.
                for p in 0..n {
                    for r in 0..n {
                        let mut f = lay.transfer(*a, *b, p, r).scaled(Complex64::new(0.5, 0.0));
                        f.add_scaled(&lay.transfer(*b, *a, p, r), Complex64::new(0.5, 0.0));
                        let target = delta(p == *a && r == *b, 0.5) + delta(p == *b && r == *a, 0.5);
                        res.push(f, target);
                    }
                }
            }
            ConstraintKind::TwoStateDiagonal { rho, chi, a } => {
                for s in [rho, chi] {
                    res.push(state_form(&lay, s, *a, *a), s.get(*a, *a));
                }
            }
            ConstraintKind::TwoStateNondiagonal { rho, chi, a, b } => {
                for s in [rho, chi] {
                    res.push(state_form(&lay, s, *a, *b), s.get(*a, *b));
                }
            }
        }
        res
    }

    /// One-based, human-readable summary.
    pub fn describe(&self) -> String {
        match &self.kind {
            ConstraintKind::DiagonalIdeal { a } => format!("r~_{0}{0} = l_{0}{0}", a + 1),
            ConstraintKind::DiagonalNonIdeal { pairs } => pairs
                .iter()
                .map(|(u, e)| format!("r~_{0}{0} = {1} l_{0}{0}", u + 1, e))
                .collect::<Vec<_>>()
                .join(", "),
            ConstraintKind::NondiagonalIdeal { a, b } => format!("r~_{0}{1} = l_{0}{1}", a + 1, b + 1),
            ConstraintKind::NondiagonalNonIdeal { a, b, eps } => {
                format!("r~_{0}{1} = {2} l_{0}{1}", a + 1, b + 1, eps)
            }
            ConstraintKind::RealPartIdeal { a, b } => {
                format!("Re r~_{0}{1} = Re l_{0}{1}", a + 1, b + 1)
            }
            ConstraintKind::TwoStateDiagonal { a, .. } => {
                format!("r~_{0}{0} = l_{0}{0} for l in {{rho, chi}}", a + 1)
            }
            ConstraintKind::TwoStateNondiagonal { a, b, .. } => {
                format!("r~_{0}{1} = l_{0}{1} for l in {{rho, chi}}", a + 1, b + 1)
            }
        }
    }
}

/// `r̃_ab(s) = Σ_{p,r} s_pr t[a][b][p][r]` as a form.
fn state_form(lay: &Layout, s: &DensityMatrix, a: usize, b: usize) -> Form {
    let mut f = Form::default();
    for p in 0..lay.n {
        for r in 0..lay.n {
            f.add_scaled(&lay.transfer(a, b, p, r), s.get(p, r));
        }
    }
    f
}

pub fn check_constraint(ch: &ChannelSpec, tc: &TransferConstraint) -> Result<f64, ConstraintError> {
    if ch.n() != tc.n {
        return Err(ConstraintError::DimensionMismatch {
            channel: ch.n(),
            constraint: tc.n,
        });
    }
    let n = tc.n;
    let t = transfer_tensor(ch);
    let block = |t: &TransferTensor, a: usize, b: usize, scale: f64| {
        let mut worst = 0.0f64;
        for p in 0..n {
            for r in 0..n {
                let target = if p == a && r == b { scale } else { 0.0 };
                worst = worst.max((t.get(a, b, p, r) - target).norm());
            }
        }
        worst
    };
    let residual = match &tc.kind {
        ConstraintKind::DiagonalIdeal { a } => block(&t, *a, *a, 1.0),
        ConstraintKind::DiagonalNonIdeal { pairs } => pairs
            .iter()
            .map(|&(u, e)| block(&t, u, u, e))
            .fold(0.0, f64::max),
        ConstraintKind::NondiagonalIdeal { a, b } => block(&t, *a, *b, 1.0),
        ConstraintKind::NondiagonalNonIdeal { a, b, eps } => block(&t, *a, *b, *eps),
        ConstraintKind::RealPartIdeal { a, b } => {
            let mut worst = 0.0f64;
            for p in 0..n {
                for r in 0..n {
                    let sym = (t.get(*a, *b, p, r) + t.get(*b, *a, p, r)) * 0.5;
                    let target = 0.5 * (((p == *a && r == *b) as u8 + (p == *b && r == *a) as u8) as f64);
                    worst = worst.max((sym - target).norm());
                }
            }
            worst
        }
        ConstraintKind::TwoStateDiagonal { rho, chi, a } => two_state_residual(ch, rho, chi, *a, *a),
        ConstraintKind::TwoStateNondiagonal { rho, chi, a, b } => {
            two_state_residual(ch, rho, chi, *a, *b)
        }
    };
    Ok(residual)
}

fn two_state_residual(ch: &ChannelSpec, rho: &DensityMatrix, chi: &DensityMatrix, a: usize, b: usize) -> f64 {
    [rho, chi]
        .iter()
        .map(|s| (target_map(ch, s.matrix())[(a, b)] - s.get(a, b)).norm())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroBlock {
    /// One-based description of the vectors that must vanish.
    pub label: String,
    pub max_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructuralReport {
    pub constraint_residual: f64,
    pub blocks: Vec<ZeroBlock>,
}

impl StructuralReport {
    pub fn max_norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_norm).fold(0.0, f64::max)
    }

    pub fn holds(&self) -> bool {
        self.max_norm() <= STRUCTURAL_ZERO_TOL
    }
}

fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Norms of the ancilla-vector blocks that a satisfied constraint forces to
/// vanish (and, for ideal non-diagonal transfer, the forced equality
/// `|c^b_kb⟩ = |c^a_ka⟩`).
pub fn structural_zero_report(
    ch: &ChannelSpec,
    tc: &TransferConstraint,
) -> Result<StructuralReport, ConstraintError> {
    let residual = check_constraint(ch, tc)?;
    if residual > STRUCTURAL_PRECONDITION_TOL {
        return Err(ConstraintError::ConstraintNotSatisfied { residual });
    }
    let n = ch.n();
    // max_k ||c^p_kl|| over p in ps, l in ls
    let block = |ps: &dyn Fn(usize) -> bool, ls: &dyn Fn(usize) -> bool| {
        let mut worst = 0.0f64;
        for p in (0..n).filter(|&p| ps(p)) {
            for l in (0..n).filter(|&l| ls(l)) {
                for k in 0..n {
                    worst = worst.max(vec_norm(ch.vector(p, k, l)));
                }
            }
        }
        worst
    };
    let mut blocks = Vec::new();
    // |c^p_ka> = 0 for p != a
    let column_block = |a: usize| ZeroBlock {
        label: format!("c^p_k{} for p != {}", a + 1, a + 1),
        max_norm: block(&|p| p != a, &|l| l == a),
    };
    // |c^a_kl> = 0 for l != a
    let row_block = |a: usize| ZeroBlock {
        label: format!("c^{}_kl for l != {}", a + 1, a + 1),
        max_norm: block(&|p| p == a, &|l| l != a),
    };
    match &tc.kind {
        ConstraintKind::DiagonalIdeal { a } => {
            blocks.push(row_block(*a));
            blocks.push(column_block(*a));
        }
        ConstraintKind::DiagonalNonIdeal { pairs } => {
            blocks.extend(pairs.iter().map(|&(u, _)| column_block(u)));
        }
        ConstraintKind::NondiagonalIdeal { a, b } => {
            blocks.push(row_block(*a));
            blocks.push(row_block(*b));
            let diff = (0..n)
                .map(|k| {
                    let d: Vec<Complex64> = ch
                        .vector(*b, k, *b)
                        .iter()
                        .zip(ch.vector(*a, k, *a))
                        .map(|(x, y)| x - y)
                        .collect();
                    vec_norm(&d)
                })
                .fold(0.0, f64::max);
            blocks.push(ZeroBlock {
                label: format!("c^{1}_k{1} - c^{0}_k{0}", a + 1, b + 1),
                max_norm: diff,
            });
        }
        ConstraintKind::TwoStateDiagonal { .. } => {
            blocks.push(ZeroBlock {
                label: "c^2_k1".into(),
                max_norm: block(&|p| p == 1, &|l| l == 0),
            });
            blocks.push(ZeroBlock {
                label: "c^1_k2".into(),
                max_norm: block(&|p| p == 0, &|l| l == 1),
            });
        }
        ConstraintKind::NondiagonalNonIdeal { .. }
        | ConstraintKind::RealPartIdeal { .. }
        | ConstraintKind::TwoStateNondiagonal { .. } => {}
    }
    Ok(StructuralReport {
        constraint_residual: residual,
        blocks,
    })
}

/// Configuration of [`sample_satisfying_channel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub dc: usize,
    pub seed: u64,
    /// Accept once the largest isometry or constraint residual is below this.
    pub tol: f64,
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            dc: 1,
            seed: 0,
            tol: 1e-10,
            restarts: 8,
            max_iters: 500,
        }
    }
}

/// Finds a channel satisfying `tc` from a seeded random isometry by
/// least-squares feasibility search on the isometry and constraint residuals.
pub fn sample_satisfying_channel(
    tc: &TransferConstraint,
    cfg: &SamplerConfig,
) -> Result<ChannelSpec, ConstraintError> {
    if let Some(reason) = tc.dimension_rule() {
        return Err(Infeasibility::DimensionRule(reason).into());
    }
    let lay = Layout { n: tc.n, dc: cfg.dc };
    let constraint = tc.residuals(cfg.dc);
    let mut best = f64::INFINITY;
    for attempt in 0..cfg.restarts {
        let seed = optimizer::restart_seed(cfg.seed, attempt);
        let start = crate::channel::random_isometry_channel(tc.n, cfg.dc, seed)
            .expect("random isometry draw");
        let z = optimizer::project_feasible(&lay, &constraint, start.amplitudes().to_vec(), cfg.max_iters);
        let ch = ChannelSpec::new(tc.n, cfg.dc, z).expect("layout preserved");
        let worst = crate::channel::check_isometry(&ch).max().max(check_constraint(&ch, tc)?);
        if worst <= cfg.tol {
            return Ok(ch);
        }
        best = best.min(worst);
    }
    Err(Infeasibility::RestartBudget {
        restarts: cfg.restarts,
        best_residual: best,
    }
    .into())
}

/// One-based on-disk form `{ "n", "kind", "params" }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConstraintFile {
    n: usize,
    #[serde(flatten)]
    kind: KindFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
enum KindFile {
    DiagonalIdeal { a: usize },
    DiagonalNonIdeal { pairs: Vec<(usize, f64)> },
    NondiagonalIdeal { a: usize, b: usize },
    NondiagonalNonIdeal { a: usize, b: usize, eps: f64 },
    RealPartIdeal { a: usize, b: usize },
    TwoStateDiagonal { rho: DensityMatrix, chi: DensityMatrix, a: usize },
    TwoStateNondiagonal { rho: DensityMatrix, chi: DensityMatrix, a: usize, b: usize },
}

impl TryFrom<ConstraintFile> for TransferConstraint {
    type Error = String;

    fn try_from(f: ConstraintFile) -> Result<Self, Self::Error> {
        let z = |i: usize| i.checked_sub(1).ok_or_else(|| "indices are one-based".to_string());
        let kind = match f.kind {
            KindFile::DiagonalIdeal { a } => ConstraintKind::DiagonalIdeal { a: z(a)? },
            KindFile::DiagonalNonIdeal { pairs } => ConstraintKind::DiagonalNonIdeal {
                pairs: pairs
                    .into_iter()
                    .map(|(u, e)| Ok((z(u)?, e)))
                    .collect::<Result<_, String>>()?,
            },
            KindFile::NondiagonalIdeal { a, b } => ConstraintKind::NondiagonalIdeal { a: z(a)?, b: z(b)? },
            KindFile::NondiagonalNonIdeal { a, b, eps } => ConstraintKind::NondiagonalNonIdeal {
                a: z(a)?,
                b: z(b)?,
                eps,
            },
            KindFile::RealPartIdeal { a, b } => ConstraintKind::RealPartIdeal { a: z(a)?, b: z(b)? },
            KindFile::TwoStateDiagonal { rho, chi, a } => {
                ConstraintKind::TwoStateDiagonal { rho, chi, a: z(a)? }
            }
            KindFile::TwoStateNondiagonal { rho, chi, a, b } => ConstraintKind::TwoStateNondiagonal {
                rho,
                chi,
                a: z(a)?,
                b: z(b)?,
            },
        };
        TransferConstraint::new(f.n, kind).map_err(|e| e.to_string())
    }
}

impl From<TransferConstraint> for ConstraintFile {
    fn from(tc: TransferConstraint) -> Self {
        let kind = match tc.kind {
            ConstraintKind::DiagonalIdeal { a } => KindFile::DiagonalIdeal { a: a + 1 },
            ConstraintKind::DiagonalNonIdeal { pairs } => KindFile::DiagonalNonIdeal {
                pairs: pairs.into_iter().map(|(u, e)| (u + 1, e)).collect(),
            },
            ConstraintKind::NondiagonalIdeal { a, b } => KindFile::NondiagonalIdeal { a: a + 1, b: b + 1 },
            ConstraintKind::NondiagonalNonIdeal { a, b, eps } => KindFile::NondiagonalNonIdeal {
                a: a + 1,
                b: b + 1,
                eps,
            },
            ConstraintKind::RealPartIdeal { a, b } => KindFile::RealPartIdeal { a: a + 1, b: b + 1 },
            ConstraintKind::TwoStateDiagonal { rho, chi, a } => {
                KindFile::TwoStateDiagonal { rho, chi, a: a + 1 }
            }
            ConstraintKind::TwoStateNondiagonal { rho, chi, a, b } => KindFile::TwoStateNondiagonal {
                rho,
                chi,
                a: a + 1,
                b: b + 1,
            },
        };
        ConstraintFile { n: tc.n, kind }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::build_saturating_diagonal;
    use crate::channel::random_isometry_channel;
    use crate::memory::memory_table;

    fn tc(n: usize, kind: ConstraintKind) -> TransferConstraint {
        TransferConstraint::new(n, kind).unwrap()
    }

    #[test]
    fn swap_transfers_nondiagonal_exactly() {
        let c = tc(3, ConstraintKind::NondiagonalIdeal { a: 0, b: 1 });
        assert_eq!(check_constraint(&ChannelSpec::swap(3), &c).unwrap(), 0.0);
        let rep = structural_zero_report(&ChannelSpec::swap(3), &c).unwrap();
        assert_eq!(rep.max_norm(), 0.0);
        assert_eq!(rep.blocks.len(), 3);
    }

    #[test]
    fn saturating_construction_satisfies_nonideal_diagonal() {
        let ch = build_saturating_diagonal(3, 0.5, 0.5).unwrap();
        let c = tc(3, ConstraintKind::DiagonalNonIdeal { pairs: vec![(0, 0.5), (1, 0.5)] });
        assert!(check_constraint(&ch, &c).unwrap() <= 1e-15);
        let rep = structural_zero_report(&ch, &c).unwrap();
        assert_eq!(rep.max_norm(), 0.0);
    }

    #[test]
    fn identity_misses_ideal_diagonal_by_one() {
        let c = tc(2, ConstraintKind::DiagonalIdeal { a: 0 });
        assert_eq!(check_constraint(&ChannelSpec::identity(2), &c).unwrap(), 1.0);
        assert!(matches!(
            structural_zero_report(&ChannelSpec::identity(2), &c),
            Err(ConstraintError::ConstraintNotSatisfied { .. })
        ));
    }

    #[test]
    fn residual_forms_agree_with_direct_check() {
        let rho = crate::scenarios::example_setup().rho().clone();
        let chi = crate::scenarios::example_setup().chi().clone();
        let kinds = vec![
            (3, ConstraintKind::DiagonalIdeal { a: 1 }),
            (3, ConstraintKind::DiagonalNonIdeal { pairs: vec![(0, 0.3), (2, 0.8)] }),
            (3, ConstraintKind::NondiagonalIdeal { a: 2, b: 0 }),
            (3, ConstraintKind::NondiagonalNonIdeal { a: 0, b: 1, eps: 0.4 }),
            (3, ConstraintKind::RealPartIdeal { a: 1, b: 2 }),
            (2, ConstraintKind::TwoStateDiagonal { rho: rho.clone(), chi: chi.clone(), a: 0 }),
            (2, ConstraintKind::TwoStateNondiagonal { rho, chi, a: 0, b: 1 }),
        ];
        for (i, (n, kind)) in kinds.into_iter().enumerate() {
            let c = tc(n, kind);
            let ch = random_isometry_channel(n, 2, i as u64).unwrap();
            let direct = check_constraint(&ch, &c).unwrap();
            let forms = c.residuals(2).max_abs(ch.amplitudes());
            assert!((direct - forms).abs() < 1e-13, "{}: {direct} vs {forms}", c.describe());
        }
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            TransferConstraint::new(2, ConstraintKind::DiagonalIdeal { a: 2 }),
            Err(ConstraintError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            TransferConstraint::new(3, ConstraintKind::NondiagonalIdeal { a: 1, b: 1 }),
            Err(ConstraintError::SameIndex(1))
        ));
        assert!(matches!(
            TransferConstraint::new(3, ConstraintKind::NondiagonalNonIdeal { a: 0, b: 1, eps: 0.0 }),
            Err(ConstraintError::EpsilonOutOfRange(_))
        ));
        assert!(matches!(
            TransferConstraint::new(3, ConstraintKind::DiagonalNonIdeal { pairs: vec![(0, 0.5), (0, 0.4)] }),
            Err(ConstraintError::DuplicateElement(0))
        ));
    }

    #[test]
    fn json_is_one_based() {
        let c = tc(3, ConstraintKind::DiagonalNonIdeal { pairs: vec![(0, 0.5), (1, 0.25)] });
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, r#"{"n":3,"kind":"diagonal_non_ideal","params":{"pairs":[[1,0.5],[2,0.25]]}}"#);
        let back: TransferConstraint = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<TransferConstraint>(
            r#"{"n":2,"kind":"diagonal_ideal","params":{"a":0}}"#
        )
        .is_err());
    }

    #[test]
    fn two_pair_attenuation_in_two_dimensions_is_infeasible() {
        let c = tc(2, ConstraintKind::DiagonalNonIdeal { pairs: vec![(0, 0.5), (1, 0.5)] });
        match sample_satisfying_channel(&c, &SamplerConfig::default()) {
            Err(ConstraintError::Infeasible(Infeasibility::DimensionRule(_))) => {}
            other => panic!("expected dimension rule, got {other:?}"),
        }
        // both ideal is full diagonal transfer, which is possible
        let ideal = tc(2, ConstraintKind::DiagonalNonIdeal { pairs: vec![(0, 1.0), (1, 1.0)] });
        assert!(ideal.dimension_rule().is_none());
    }

    #[test]
    fn sampler_finds_ideal_diagonal_channel() {
        let c = tc(2, ConstraintKind::DiagonalIdeal { a: 0 });
        let cfg = SamplerConfig::default();
        let ch = sample_satisfying_channel(&c, &cfg).unwrap();
        assert!(check_constraint(&ch, &c).unwrap() <= 1e-10);
        assert_eq!(ch, sample_satisfying_channel(&c, &cfg).unwrap());
        let rep = structural_zero_report(&ch, &c).unwrap();
        assert!(rep.holds(), "{rep:?}");
    }

    #[test]
    fn sampled_nondiagonal_ideal_channel_loses_memory() {
        let c = tc(3, ConstraintKind::NondiagonalIdeal { a: 0, b: 1 });
        let cfg = SamplerConfig { dc: 2, seed: 9, ..SamplerConfig::default() };
        let ch = sample_satisfying_channel(&c, &cfg).unwrap();
        let t = memory_table(&ch);
        assert!(t.entry(0, 1) <= 1e-7);
        assert!(t.diag_diff(0, 1) <= 1e-7);
    }
}
