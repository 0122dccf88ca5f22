//! Trade-off bounds between transfer quality and preserved memory, the
//! channels that saturate them, and a numerical trace of the inequality chain
//! behind the non-diagonal bound.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::channel::{check_isometry, ChannelSpec};
use crate::constraints::{check_constraint, ConstraintError, ConstraintKind, TransferConstraint};
use crate::memory::memory_table;

/// Negative slack beyond this falsifies a bound.
pub const SLACK_TOL: f64 = 1e-8;
/// Residual below which a channel counts as satisfying isometry and constraint.
pub const ADMISSIBLE_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("non-ideality {value} outside {range}")]
    OutOfRange { value: f64, range: &'static str },
    #[error("dimension n = {n} too small, need at least {min}")]
    DimensionTooSmall { n: usize, min: usize },
}

fn check_range(value: f64, lo_open: bool, hi_open: bool) -> Result<(), BoundError> {
    let lo_ok = if lo_open { value > 0.0 } else { value >= 0.0 };
    let hi_ok = if hi_open { value < 1.0 } else { value <= 1.0 };
    if lo_ok && hi_ok {
        return Ok(());
    }
    let range = match (lo_open, hi_open) {
        (true, true) => "(0, 1)",
        (true, false) => "(0, 1]",
        (false, true) => "[0, 1)",
        (false, false) => "[0, 1]",
    };
    Err(BoundError::OutOfRange { value, range })
}

/// Largest memory on `λ_ab` when both `λ_aa` and `λ_bb` are transferred
/// with attenuations `eps_a`, `eps_b`: `sqrt((1 - eps_a)(1 - eps_b))`.
pub fn bound_diagonal(eps_a: f64, eps_b: f64) -> Result<f64, BoundError> {
    check_range(eps_a, true, false)?;
    check_range(eps_b, true, false)?;
    Ok(((1.0 - eps_a) * (1.0 - eps_b)).sqrt())
}

/// Largest memory on `λ_ac` when only `λ_aa` (of `a`, `c`) is transferred:
/// `sqrt(1 - eps_a)`.
pub fn bound_diagonal_other(eps_a: f64) -> Result<f64, BoundError> {
    check_range(eps_a, false, false)?;
    Ok((1.0 - eps_a).sqrt())
}

/// Largest memory on `λ_ab` when `λ_ab` itself is transferred with
/// attenuation `eps` through a scalar ancilla: `sqrt(1 - eps²)`.
pub fn bound_nondiagonal(eps: f64) -> Result<f64, BoundError> {
    check_range(eps, false, false)?;
    Ok((1.0 - eps * eps).sqrt())
}

/// Scalar-ancilla channel transferring `λ_11`, `λ_22` with attenuations
/// `eps_1`, `eps_2` while keeping the most memory on `λ_12` and `λ_13`. Basis
/// vectors beyond the third are passed through to `|p⟩ ⊗ |p̄⟩`.
pub fn build_saturating_diagonal(n: usize, eps_1: f64, eps_2: f64) -> Result<ChannelSpec, BoundError> {
    if n < 3 {
        return Err(BoundError::DimensionTooSmall { n, min: 3 });
    }
    check_range(eps_1, true, true)?;
    check_range(eps_2, true, true)?;
    let mut entries = vec![
        (0, 0, 0, eps_1.sqrt()),
        (0, 0, 2, (1.0 - eps_1).sqrt()),
        (1, 1, 1, eps_2.sqrt()),
        (1, 1, 2, (1.0 - eps_2).sqrt()),
        (2, 2, 2, 1.0),
    ];
    entries.extend((3..n).map(|p| (p, p, p, 1.0)));
    Ok(ChannelSpec::from_scalars(n, &entries))
}

/// Scalar-ancilla channel with `r̃_12 = eps λ_12` and memory
/// `sqrt(1 - eps²)` on `λ_12`. Extra basis vectors map to `|p⟩ ⊗ |p̄⟩`.
pub fn build_saturating_nondiagonal(n: usize, eps: f64) -> Result<ChannelSpec, BoundError> {
    if n < 2 {
        return Err(BoundError::DimensionTooSmall { n, min: 2 });
    }
    check_range(eps, true, true)?;
    let mut entries = vec![
        (0, 0, 0, 1.0),
        (1, 1, 0, (1.0 - eps * eps).sqrt()),
        (1, 0, 1, eps),
    ];
    entries.extend((2..n).map(|p| (p, p, p, 1.0)));
    Ok(ChannelSpec::from_scalars(n, &entries))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub constraint: String,
    /// One-based `(a, c)`: the report concerns the memory on `λ_ac`.
    pub pair: (usize, usize),
    pub theoretical: f64,
    pub achieved: f64,
    pub slack: f64,
}

impl BoundReport {
    pub fn violated(&self) -> bool {
        self.slack < -SLACK_TOL
    }
}

/// Closed-form bound on the memory of `λ_ac` (zero-based) implied by `tc`,
/// if one is known for ancilla dimension `dc`.
pub fn bound_for(tc: &TransferConstraint, a: usize, c: usize, dc: usize) -> Option<f64> {
    if a == c {
        return None;
    }
    let transferred = |pairs: &[(usize, f64)], i: usize| pairs.iter().find(|(u, _)| *u == i).map(|p| p.1);
    match tc.kind() {
        ConstraintKind::DiagonalIdeal { a: t } => (a == *t || c == *t).then_some(0.0),
        ConstraintKind::DiagonalNonIdeal { pairs } => {
            match (transferred(pairs, a), transferred(pairs, c)) {
                (Some(ea), Some(ec)) => Some(((1.0 - ea) * (1.0 - ec)).sqrt()),
                (Some(e), None) | (None, Some(e)) => Some((1.0 - e).sqrt()),
                (None, None) => None,
            }
        }
        ConstraintKind::NondiagonalIdeal { a: x, b: y } => {
            ((a, c) == (*x, *y) || (a, c) == (*y, *x)).then_some(0.0)
        }
        ConstraintKind::NondiagonalNonIdeal { a: x, b: y, eps } => {
            (dc == 1 && ((a, c) == (*x, *y) || (a, c) == (*y, *x))).then(|| (1.0 - eps * eps).sqrt())
        }
        ConstraintKind::TwoStateDiagonal { .. } => Some(0.0),
        ConstraintKind::RealPartIdeal { .. } | ConstraintKind::TwoStateNondiagonal { .. } => None,
    }
}

/// Bound reports for every pair `a < c` with a known bound. Returns `None`
/// when the channel is not admissible for `tc` (bounds say nothing then).
pub fn bound_reports(
    ch: &ChannelSpec,
    tc: &TransferConstraint,
) -> Result<Option<Vec<BoundReport>>, ConstraintError> {
    let residual = check_constraint(ch, tc)?;
    if residual > ADMISSIBLE_TOL || check_isometry(ch).max() > ADMISSIBLE_TOL {
        return Ok(None);
    }
    let table = memory_table(ch);
    let n = ch.n();
    let mut out = Vec::new();
    for a in 0..n {
        for c in a + 1..n {
            if let Some(theoretical) = bound_for(tc, a, c, ch.dc()) {
                let achieved = table.entry(a, c);
                out.push(BoundReport {
                    constraint: tc.describe(),
                    pair: (a + 1, c + 1),
                    theoretical,
                    achieved,
                    slack: theoretical - achieved,
                });
            }
        }
    }
    Ok(Some(out))
}

/// Numerical trace of the chain bounding `‖Θ_ab‖²` for scalar-ancilla
/// channels with `r̃_ab = ε λ_ab`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainReport {
    pub eps: f64,
    pub theta_sq: f64,
    /// `[φ^a_a, φ^a_b, φ^b_a, φ^b_b]` with `φ^u_v = Σ_k |c^u_kv|²`
    pub phi: [f64; 4],
    /// Remainder sum over `(s, l)` outside `{a, b}²`.
    pub lambda: (f64, f64),
    /// `| ‖Θ_ab‖² − (φ^a_a φ^b_a + φ^a_b φ^b_b + Λ) |`
    pub decomposition_residual: f64,
    /// `Σ' sqrt(φ^a_l φ^a_s φ^b_l φ^b_s)`
    pub lambda_bound_termwise: f64,
    /// `sqrt(Σ' φ^a_l φ^a_s · Σ' φ^b_l φ^b_s)`
    pub lambda_bound_product: f64,
    /// `φ^a_a φ^b_a + φ^a_b φ^b_b + sqrt([1 − (φ^a_a+φ^a_b)²][1 − (φ^b_a+φ^b_b)²])`
    pub f_value: f64,
    pub bound_sq: f64,
}

impl ChainReport {
    /// Worst violation over every link of the chain (≤ 0 means all hold).
    pub fn worst_violation(&self) -> f64 {
        let lam = Complex64::new(self.lambda.0, self.lambda.1).norm();
        let [aa, _, _, bb] = self.phi;
        [
            self.decomposition_residual,
            lam - self.lambda_bound_termwise,
            self.lambda_bound_termwise - self.lambda_bound_product,
            self.theta_sq - self.f_value,
            self.f_value - self.bound_sq,
            self.eps * self.eps - aa * bb,
            self.phi[0] + self.phi[1] - 1.0,
            self.phi[2] + self.phi[3] - 1.0,
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.worst_violation() <= tol
    }
}

/// Evaluates every link of the non-diagonal chain for a scalar-ancilla
/// channel and transferred element `(a, b)` (zero-based).
pub fn nondiagonal_chain(ch: &ChannelSpec, a: usize, b: usize, eps: f64) -> ChainReport {
    assert_eq!(ch.dc(), 1, "the chain is stated for scalar ancillas");
    let n = ch.n();
    let c = |p: usize, k: usize, l: usize| ch.get(p, k, l, 0);
    let phi = |u: usize, v: usize| (0..n).map(|k| c(u, k, v).norm_sqr()).sum::<f64>();
    let theta_sq: f64 = {
        let mut s = 0.0;
        for k in 0..n {
            for nn in 0..n {
                let z: Complex64 = (0..n).map(|l| c(a, nn, l).conj() * c(b, k, l)).sum();
                s += z.norm_sqr();
            }
        }
        s
    };
    let excluded = |s: usize, l: usize| (s == a || s == b) && (l == a || l == b);
    let mut lambda = Complex64::new(0.0, 0.0);
    let mut termwise = 0.0;
    let mut sum_a = 0.0;
    let mut sum_b = 0.0;
    for s in 0..n {
        for l in 0..n {
            if excluded(s, l) {
                continue;
            }
            let left: Complex64 = (0..n).map(|k| c(a, k, l) * c(a, k, s).conj()).sum();
            let right: Complex64 = (0..n).map(|k| c(b, k, s) * c(b, k, l).conj()).sum();
            lambda += left * right;
            termwise += (phi(a, l) * phi(a, s) * phi(b, l) * phi(b, s)).sqrt();
            sum_a += phi(a, l) * phi(a, s);
            sum_b += phi(b, l) * phi(b, s);
        }
    }
    let (aa, ab, ba, bb) = (phi(a, a), phi(a, b), phi(b, a), phi(b, b));
    let head = aa * ba + ab * bb;
    let tail = ((1.0 - (aa + ab).powi(2)) * (1.0 - (ba + bb).powi(2))).max(0.0).sqrt();
    ChainReport {
        eps,
        theta_sq,
        phi: [aa, ab, ba, bb],
        lambda: (lambda.re, lambda.im),
        decomposition_residual: (Complex64::new(theta_sq - head, 0.0) - lambda).norm(),
        lambda_bound_termwise: termwise,
        lambda_bound_product: (sum_a * sum_b).sqrt(),
        f_value: head + tail,
        bound_sq: 1.0 - eps * eps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::check_isometry;
    use crate::memory::{memory_table, wirtinger_fd};
    use crate::qcore::frobenius_norm;

    #[test]
    fn closed_forms() {
        assert_eq!(bound_diagonal(1.0, 1.0).unwrap(), 0.0);
        assert!((bound_diagonal(0.5, 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(bound_diagonal(0.19, 1.0).unwrap(), 0.0);
        assert_eq!(bound_diagonal_other(1.0).unwrap(), 0.0);
        assert!((bound_diagonal_other(0.5).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(bound_diagonal_other(0.0).unwrap(), 1.0);
        assert_eq!(bound_nondiagonal(1.0).unwrap(), 0.0);
        assert!((bound_nondiagonal(0.6).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(bound_nondiagonal(0.0).unwrap(), 1.0);
    }

    #[test]
    fn out_of_range() {
        assert!(bound_diagonal(0.0, 0.5).is_err());
        assert!(bound_diagonal(0.5, 1.5).is_err());
        assert!(bound_diagonal_other(-0.1).is_err());
        assert!(bound_nondiagonal(1.01).is_err());
        assert!(build_saturating_diagonal(3, 1.0, 0.5).is_err());
        assert!(build_saturating_diagonal(2, 0.5, 0.5).is_err());
        assert!(build_saturating_nondiagonal(2, 0.0).is_err());
    }

    #[test]
    fn diagonal_construction_saturates() {
        let ch = build_saturating_diagonal(3, 0.5, 0.5).unwrap();
        assert!(check_isometry(&ch).max() <= 1e-15);
        let t = memory_table(&ch);
        assert!((t.entry(0, 1) - 0.5).abs() < 1e-15);
        assert!((t.entry(0, 0) - 1.0).abs() < 1e-15);
        assert!((t.entry(1, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_diagonal_construction_cross_checked_by_fd() {
        let ch = build_saturating_diagonal(3, 0.9, 0.1).unwrap();
        let t = memory_table(&ch);
        assert!((t.entry(0, 1) - 0.3).abs() < 1e-12);
        let fd = wirtinger_fd(&ch, 0, 1, 1e-5).unwrap();
        assert!((frobenius_norm(&fd) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn nondiagonal_construction() {
        let ch = build_saturating_nondiagonal(2, 0.6).unwrap();
        assert!((memory_table(&ch).entry(0, 1) - 0.8).abs() < 1e-15);
        let ch = build_saturating_nondiagonal(2, 1.0 - 1e-9).unwrap();
        assert!(memory_table(&ch).entry(0, 1) < 1e-4);
        let ch = build_saturating_nondiagonal(3, 0.6).unwrap();
        let tc = TransferConstraint::new(3, ConstraintKind::NondiagonalNonIdeal { a: 0, b: 1, eps: 0.6 }).unwrap();
        assert!(check_constraint(&ch, &tc).unwrap() <= 1e-15);
        assert!((memory_table(&ch).entry(0, 1) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn reports_for_saturating_channels_have_zero_slack() {
        let ch = build_saturating_diagonal(4, 0.3, 0.6).unwrap();
        let tc = TransferConstraint::new(4, ConstraintKind::DiagonalNonIdeal { pairs: vec![(0, 0.3), (1, 0.6)] }).unwrap();
        let reps = bound_reports(&ch, &tc).unwrap().unwrap();
        // (1,2), (1,3), (1,4), (2,3), (2,4)
        assert_eq!(reps.len(), 5);
        assert!(reps.iter().all(|r| !r.violated()));
        let tight: Vec<_> = reps.iter().filter(|r| r.slack.abs() < 1e-12).map(|r| r.pair).collect();
        assert_eq!(tight, vec![(1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn bound_reports_skip_inadmissible_channels() {
        let tc = TransferConstraint::new(2, ConstraintKind::DiagonalIdeal { a: 0 }).unwrap();
        assert!(bound_reports(&ChannelSpec::identity(2), &tc).unwrap().is_none());
        let reps = bound_reports(&ChannelSpec::swap(2), &tc).unwrap().unwrap();
        assert_eq!(reps.len(), 1);
        assert_eq!(reps[0].achieved, 0.0);
    }

    #[test]
    fn chain_on_saturating_channel_is_tight() {
        let ch = build_saturating_nondiagonal(3, 0.6).unwrap();
        let rep = nondiagonal_chain(&ch, 0, 1, 0.6);
        assert!(rep.holds(1e-10), "{rep:?}");
        assert!((rep.theta_sq - rep.bound_sq).abs() < 1e-12);
    }

    /// Grid oracle for the final maximization step: over the admissible
    /// `φ` region, F never exceeds `1 − ε²`.
    #[test]
    fn f_maximum_on_grid() {
        let steps = 40;
        for &eps in &[0.2, 0.5, 0.8] {
            let bound = 1.0 - eps * eps;
            let mut best = f64::NEG_INFINITY;
            let g = |i: usize| i as f64 / steps as f64;
            for i in 0..=steps {
                for j in 0..=steps {
                    for u in 0..=steps {
                        for v in 0..=steps {
                            let (aa, ab, ba, bb) = (g(i), g(j), g(u), g(v));
                            if aa + ab > 1.0 || ba + bb > 1.0 || aa * bb < eps * eps {
                                continue;
                            }
                            let f = aa * ba + ab * bb
                                + ((1.0 - (aa + ab).powi(2)) * (1.0 - (ba + bb).powi(2))).max(0.0).sqrt();
                            best = best.max(f);
                        }
                    }
                }
            }
            assert!(best <= bound + 1e-12, "eps {eps}: {best} > {bound}");
            assert!(best >= bound - 0.05);
        }
    }
}
