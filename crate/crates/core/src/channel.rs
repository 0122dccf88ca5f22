//! The coupling between source A and target B (plus ancilla C) stored as the
//! restriction of the joint unitary to the fixed initial `|1̄⟩ ⊗ |c⟩` state of
//! B+C.
//!
//! For every source basis vector `|p⟩` the unitary produces
//! `|ψ_p⟩ = Σ_{k,l} |k⟩ ⊗ |l̄⟩ ⊗ |c^p_kl⟩`, where `|c^p_kl⟩` lives in a
//! `dc`-dimensional slice of the ancilla space. Unitarity of the full operator
//! is equivalent to orthonormality of the columns `ψ_p`, so only those columns
//! are stored. All indices in this module are zero-based.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qcore::{
    complex_gaussian, hermitian_part, rng_from_seed, validate_density, ComplexMatrix,
    DensityError, DensityMatrix,
};

/// Isometry residuals above this reject a channel.
pub const ISOMETRY_TOL: f64 = 1e-10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: channel has n = {channel}, state has dimension {state}")]
    DimensionMismatch { channel: usize, state: usize },
    #[error("channel is not an isometry: off-diagonal residual {}, diagonal residual {}",
        .0.max_offdiag, .0.max_diag_dev)]
    InvalidChannel(IsometryResidual),
    #[error("random isometry draw was rank deficient after {attempts} attempts")]
    DegenerateDraw { attempts: usize },
    #[error("reduced state is not a density matrix: {0}")]
    InvalidOutput(#[from] DensityError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed channel json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsometryResidual {
    /// max over p != r of |⟨ψ_p|ψ_r⟩|
    pub max_offdiag: f64,
    /// max over p of |⟨ψ_p|ψ_p⟩ - 1|
    pub max_diag_dev: f64,
}

impl IsometryResidual {
    pub fn max(&self) -> f64 {
        self.max_offdiag.max(self.max_diag_dev)
    }

    pub fn accepted(&self) -> bool {
        self.max() <= ISOMETRY_TOL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// The source map λ → λ̃.
    A,
    /// The transfer map λ → r̃.
    B,
}

/// The tensor `{|c^p_kl⟩}`; entry `(p, k, l, m)` is the `m`-th ancilla
/// amplitude of `|c^p_kl⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChannelFile", into = "ChannelFile")]
pub struct ChannelSpec {
    n: usize,
    dc: usize,
    c: Vec<Complex64>,
}

impl ChannelSpec {
    pub fn new(n: usize, dc: usize, c: Vec<Complex64>) -> Result<Self, ChannelError> {
        if n == 0 || dc == 0 {
            return Err(ChannelError::ShapeMismatch(format!(
                "n = {n} and dc = {dc} must be positive"
            )));
        }
        let expected = n * n * n * dc;
        if c.len() != expected {
            return Err(ChannelError::ShapeMismatch(format!(
                "expected {expected} amplitudes for n = {n}, dc = {dc}, got {}",
                c.len()
            )));
        }
        if c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(ChannelError::ShapeMismatch("non-finite amplitude".into()));
        }
        Ok(ChannelSpec { n, dc, c })
    }

    pub fn from_fn(
        n: usize,
        dc: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> Complex64,
    ) -> Self {
        let mut c = Vec::with_capacity(n * n * n * dc);
        for p in 0..n {
            for k in 0..n {
                for l in 0..n {
                    for m in 0..dc {
                        c.push(f(p, k, l, m));
                    }
                }
            }
        }
        ChannelSpec { n, dc, c }
    }

    /// Scalar (`dc = 1`) channel from a sparse list of `(p, k, l, value)`.
    pub fn from_scalars(n: usize, entries: &[(usize, usize, usize, f64)]) -> Self {
        let mut ch = ChannelSpec::from_fn(n, 1, |_, _, _, _| ZERO);
        for &(p, k, l, v) in entries {
            let i = ch.index(p, k, l, 0);
            ch.c[i] = Complex64::new(v, 0.0);
        }
        ch
    }

    /// `c^p_kl = δ_kp δ_l1`: nothing moves, B stays in `|1̄⟩`.
    pub fn identity(n: usize) -> Self {
        ChannelSpec::from_fn(n, 1, |p, k, l, _| if k == p && l == 0 { ONE } else { ZERO })
    }

    /// `c^p_kl = δ_k1 δ_lp`: the full state moves to B, A is reset to `|1⟩`.
    pub fn swap(n: usize) -> Self {
        ChannelSpec::from_fn(n, 1, |p, k, l, _| if k == 0 && l == p { ONE } else { ZERO })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dc(&self) -> usize {
        self.dc
    }

    #[inline]
    pub fn index(&self, p: usize, k: usize, l: usize, m: usize) -> usize {
        ((p * self.n + k) * self.n + l) * self.dc + m
    }

    /// Flat amplitude storage in `(p, k, l, m)` row-major order.
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.c
    }

    pub fn get(&self, p: usize, k: usize, l: usize, m: usize) -> Complex64 {
        self.c[self.index(p, k, l, m)]
    }

    /// The ancilla vector `|c^p_kl⟩`.
    pub fn vector(&self, p: usize, k: usize, l: usize) -> &[Complex64] {
        let i = self.index(p, k, l, 0);
        &self.c[i..i + self.dc]
    }

    /// The isometry column `ψ_p`, flattened over `(k, l, m)`.
    pub fn column(&self, p: usize) -> &[Complex64] {
        let len = self.n * self.n * self.dc;
        &self.c[p * len..(p + 1) * len]
    }

    /// `⟨c^r_{k' l'}|c^p_{k l}⟩`
    #[inline]
    pub fn inner(&self, r: usize, k2: usize, l2: usize, p: usize, k: usize, l: usize) -> Complex64 {
        self.vector(r, k2, l2)
            .iter()
            .zip(self.vector(p, k, l))
            .map(|(x, y)| x.conj() * y)
            .sum()
    }

    /// Gram matrix `G_rp = ⟨ψ_r|ψ_p⟩`.
    pub fn gram(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.n, self.n, |r, p| {
            self.column(r)
                .iter()
                .zip(self.column(p))
                .map(|(x, y)| x.conj() * y)
                .sum()
        })
    }

    /// The isometry as a `(n·n·dc) × n` matrix with columns `ψ_p`.
    pub fn isometry_matrix(&self) -> ComplexMatrix {
        let rows = self.n * self.n * self.dc;
        ComplexMatrix::from_fn(rows, self.n, |i, p| self.column(p)[i])
    }

    /// Same channel with the A and B bases relabelled: basis vector `i` of
    /// this channel becomes `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> ChannelSpec {
        assert_eq!(perm.len(), self.n);
        let mut out = ChannelSpec::from_fn(self.n, self.dc, |_, _, _, _| ZERO);
        for p in 0..self.n {
            for k in 0..self.n {
                for l in 0..self.n {
                    for m in 0..self.dc {
                        let j = out.index(perm[p], perm[k], perm[l], m);
                        out.c[j] = self.get(p, k, l, m);
                    }
                }
            }
        }
        out
    }

    /// Embeds the ancilla into a larger one of dimension `dc` (zero padding).
    pub fn with_ancilla_dim(&self, dc: usize) -> ChannelSpec {
        assert!(dc >= self.dc);
        ChannelSpec::from_fn(self.n, dc, |p, k, l, m| {
            if m < self.dc { self.get(p, k, l, m) } else { ZERO }
        })
    }

    /// Re-orthonormalizes the columns by modified Gram–Schmidt (two passes).
    pub fn orthonormalized(&self) -> Option<ChannelSpec> {
        let cols: Vec<Vec<Complex64>> = (0..self.n).map(|p| self.column(p).to_vec()).collect();
        let q = gram_schmidt(cols, 1e-10)?;
        Some(ChannelSpec {
            n: self.n,
            dc: self.dc,
            c: q.into_iter().flatten().collect(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ChannelFile::from(self)).expect("channel serializes")
    }

    pub fn from_json(s: &str) -> Result<ChannelSpec, ChannelError> {
        let file: ChannelFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn load(path: &Path) -> Result<ChannelSpec, ChannelError> {
        ChannelSpec::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ChannelError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// On-disk form: `{ "n", "dc", "c": [p][k][l][m] of [re, im] }`.
#[derive(Debug, Serialize, Deserialize)]
struct ChannelFile {
    n: usize,
    dc: usize,
    c: Vec<Vec<Vec<Vec<Complex64>>>>,
}

impl From<&ChannelSpec> for ChannelFile {
    fn from(ch: &ChannelSpec) -> Self {
        let c = (0..ch.n)
            .map(|p| {
                (0..ch.n)
                    .map(|k| (0..ch.n).map(|l| ch.vector(p, k, l).to_vec()).collect())
                    .collect()
            })
            .collect();
        ChannelFile { n: ch.n, dc: ch.dc, c }
    }
}

impl From<ChannelSpec> for ChannelFile {
    fn from(ch: ChannelSpec) -> Self {
        ChannelFile::from(&ch)
    }
}

impl TryFrom<ChannelFile> for ChannelSpec {
    type Error = ChannelError;

    fn try_from(f: ChannelFile) -> Result<Self, Self::Error> {
        let (n, dc) = (f.n, f.dc);
        let bad = |what: &str| ChannelError::ShapeMismatch(format!("{what} (n = {n}, dc = {dc})"));
        if f.c.len() != n {
            return Err(bad("outer dimension p"));
        }
        let mut flat = Vec::with_capacity(n * n * n * dc);
        for block in f.c {
            if block.len() != n {
                return Err(bad("dimension k"));
            }
            for row in block {
                if row.len() != n {
                    return Err(bad("dimension l"));
                }
                for v in row {
                    if v.len() != dc {
                        return Err(bad("ancilla dimension m"));
                    }
                    flat.extend(v);
                }
            }
        }
        ChannelSpec::new(n, dc, flat)
    }
}

fn gram_schmidt(mut cols: Vec<Vec<Complex64>>, rel_tol: f64) -> Option<Vec<Vec<Complex64>>> {
    let norm = |v: &[Complex64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for j in 0..cols.len() {
        let start = norm(&cols[j]);
        if start == 0.0 {
            return None;
        }
        for _pass in 0..2 {
            for i in 0..j {
                let proj: Complex64 = cols[i].iter().zip(&cols[j]).map(|(q, v)| q.conj() * v).sum();
                let qi = cols[i].clone();
                for (v, q) in cols[j].iter_mut().zip(&qi) {
                    *v -= proj * q;
                }
            }
        }
        let nv = norm(&cols[j]);
        if nv <= rel_tol * start {
            return None;
        }
        cols[j].iter_mut().for_each(|v| *v /= nv);
    }
    Some(cols)
}

pub fn check_isometry(ch: &ChannelSpec) -> IsometryResidual {
    let g = ch.gram();
    let mut res = IsometryResidual {
        max_offdiag: 0.0,
        max_diag_dev: 0.0,
    };
    for r in 0..ch.n {
        for p in 0..ch.n {
            if r == p {
                res.max_diag_dev = res.max_diag_dev.max((g[(r, p)] - ONE).norm());
            } else {
                res.max_offdiag = res.max_offdiag.max(g[(r, p)].norm());
            }
        }
    }
    res
}

fn require_isometry(ch: &ChannelSpec) -> Result<(), ChannelError> {
    let res = check_isometry(ch);
    if res.accepted() {
        Ok(())
    } else {
        Err(ChannelError::InvalidChannel(res))
    }
}

/// Joint state `V m V†` on A⊗B⊗C (row index `(k, l, m)`).
fn joint_operator(ch: &ChannelSpec, m: &ComplexMatrix) -> ComplexMatrix {
    let v = ch.isometry_matrix();
    &v * m * v.adjoint()
}

/// Linear extension of λ → λ̃ to arbitrary `n × n` matrices, computed by an
/// explicit partial trace over B and C of the joint operator.
pub fn source_map(ch: &ChannelSpec, m: &ComplexMatrix) -> ComplexMatrix {
    let (n, dc) = (ch.n, ch.dc);
    let joint = joint_operator(ch, m);
    let row = |k: usize, l: usize, a: usize| (k * n + l) * dc + a;
    ComplexMatrix::from_fn(n, n, |k, k2| {
        let mut s = ZERO;
        for l in 0..n {
            for a in 0..dc {
                s += joint[(row(k, l, a), row(k2, l, a))];
            }
        }
        s
    })
}

/// Linear extension of λ → r̃, by partial trace over A and C.
pub fn target_map(ch: &ChannelSpec, m: &ComplexMatrix) -> ComplexMatrix {
    let (n, dc) = (ch.n, ch.dc);
    let joint = joint_operator(ch, m);
    let row = |k: usize, l: usize, a: usize| (k * n + l) * dc + a;
    ComplexMatrix::from_fn(n, n, |l, l2| {
        let mut s = ZERO;
        for k in 0..n {
            for a in 0..dc {
                s += joint[(row(k, l, a), row(k, l2, a))];
            }
        }
        s
    })
}

/// Final states `(λ̃, r̃)` of A and B for initial state `lam` of A.
pub fn apply_channel(
    ch: &ChannelSpec,
    lam: &DensityMatrix,
) -> Result<(DensityMatrix, DensityMatrix), ChannelError> {
    if lam.dim() != ch.n {
        return Err(ChannelError::DimensionMismatch {
            channel: ch.n,
            state: lam.dim(),
        });
    }
    require_isometry(ch)?;
    let lt = validate_density(&hermitian_part(&source_map(ch, lam.matrix())))?;
    let rt = validate_density(&hermitian_part(&target_map(ch, lam.matrix())))?;
    Ok((lt, rt))
}

/// Kraus operators of the reduced map on `side`. Operators that vanish
/// identically (Frobenius norm below 1e-14) are dropped.
pub fn kraus_operators(ch: &ChannelSpec, side: Side) -> Result<Vec<ComplexMatrix>, ChannelError> {
    require_isometry(ch)?;
    let (n, dc) = (ch.n, ch.dc);
    let mut ops = Vec::with_capacity(n * dc);
    // Side A: K_{l,m} = Σ_{k,p} c^p_kl[m] |k⟩⟨p|.  Side B: K_{k,m} = Σ_{l,p} c^p_kl[m] |l̄⟩⟨p|.
    for env in 0..n {
        for a in 0..dc {
            let k_op = ComplexMatrix::from_fn(n, n, |out, p| match side {
                Side::A => ch.get(p, out, env, a),
                Side::B => ch.get(p, env, out, a),
            });
            if crate::qcore::frobenius_norm(&k_op) > 1e-14 {
                ops.push(k_op);
            }
        }
    }
    Ok(ops)
}

pub fn apply_kraus(ops: &[ComplexMatrix], m: &ComplexMatrix) -> ComplexMatrix {
    let n = m.nrows();
    ops.iter()
        .fold(ComplexMatrix::zeros(n, n), |acc, k| acc + k * m * k.adjoint())
}

/// max |(Σ K†K − I)_ij|
pub fn kraus_completeness_residual(ops: &[ComplexMatrix], n: usize) -> f64 {
    let sum = ops
        .iter()
        .fold(ComplexMatrix::zeros(n, n), |acc, k| acc + k.adjoint() * k);
    (sum - ComplexMatrix::identity(n, n))
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Coefficients `t[a][b][p][r] = Σ_k ⟨c^r_kb|c^p_ka⟩`, so that
/// `r̃_ab = Σ_{p,r} λ_pr t[a][b][p][r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferTensor {
    n: usize,
    t: Vec<Complex64>,
}

impl TransferTensor {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, a: usize, b: usize, p: usize, r: usize) -> Complex64 {
        let n = self.n;
        self.t[((a * n + b) * n + p) * n + r]
    }

    /// `r̃` for an arbitrary (not necessarily valid) input matrix.
    pub fn apply(&self, lam: &ComplexMatrix) -> ComplexMatrix {
        let n = self.n;
        ComplexMatrix::from_fn(n, n, |a, b| {
            let mut s = ZERO;
            for p in 0..n {
                for r in 0..n {
                    s += lam[(p, r)] * self.get(a, b, p, r);
                }
            }
            s
        })
    }
}

pub fn transfer_tensor(ch: &ChannelSpec) -> TransferTensor {
    let n = ch.n;
    let mut t = Vec::with_capacity(n * n * n * n);
    for a in 0..n {
        for b in 0..n {
            for p in 0..n {
                for r in 0..n {
                    t.push((0..n).map(|k| ch.inner(r, k, b, p, k, a)).sum());
                }
            }
        }
    }
    TransferTensor { n, t }
}

/// Columns from orthonormalized complex Gaussian vectors of length `n·n·dc`.
pub fn random_isometry_channel(n: usize, dc: usize, seed: u64) -> Result<ChannelSpec, ChannelError> {
    assert!(n >= 2 && dc >= 1, "random_isometry_channel needs n >= 2, dc >= 1");
    const ATTEMPTS: usize = 8;
    let len = n * n * dc;
    let mut rng = rng_from_seed(seed);
    for _ in 0..ATTEMPTS {
        let cols: Vec<Vec<Complex64>> = (0..n)
            .map(|_| (0..len).map(|_| complex_gaussian(&mut rng)).collect())
            .collect();
        if let Some(q) = gram_schmidt(cols, 1e-8) {
            return Ok(ChannelSpec {
                n,
                dc,
                c: q.into_iter().flatten().collect(),
            });
        }
    }
    Err(ChannelError::DegenerateDraw { attempts: ATTEMPTS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{frobenius_norm, sample_density};

    fn max_abs(m: &ComplexMatrix) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn standard_channels_are_exact_isometries() {
        for n in 2..5 {
            assert_eq!(check_isometry(&ChannelSpec::swap(n)).max(), 0.0);
            assert_eq!(check_isometry(&ChannelSpec::identity(n)).max(), 0.0);
        }
    }

    #[test]
    fn swap_moves_state_to_target() {
        let lam = sample_density(3, 11);
        let (lt, rt) = apply_channel(&ChannelSpec::swap(3), &lam).unwrap();
        assert!(max_abs(&(lt.matrix() - DensityMatrix::basis_projector(3, 0).matrix())) < 1e-15);
        assert!(max_abs(&(rt.matrix() - lam.matrix())) < 1e-15);
    }

    #[test]
    fn identity_keeps_source() {
        let lam = sample_density(3, 12);
        let (lt, rt) = apply_channel(&ChannelSpec::identity(3), &lam).unwrap();
        assert!(max_abs(&(lt.matrix() - lam.matrix())) < 1e-15);
        assert!(max_abs(&(rt.matrix() - DensityMatrix::basis_projector(3, 0).matrix())) < 1e-15);
    }

    #[test]
    fn dimension_and_validity_errors() {
        let lam = sample_density(2, 0);
        assert!(matches!(
            apply_channel(&ChannelSpec::swap(3), &lam),
            Err(ChannelError::DimensionMismatch { .. })
        ));
        let broken = ChannelSpec::from_scalars(2, &[(0, 0, 0, 1.0), (1, 0, 0, 1.0)]);
        assert!(matches!(
            apply_channel(&broken, &lam),
            Err(ChannelError::InvalidChannel(_))
        ));
        assert!(matches!(
            ChannelSpec::new(2, 1, vec![ZERO; 7]),
            Err(ChannelError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn transfer_tensor_of_standard_channels() {
        let n = 3;
        let ts = transfer_tensor(&ChannelSpec::swap(n));
        let ti = transfer_tensor(&ChannelSpec::identity(n));
        let d = |x: bool| if x { ONE } else { ZERO };
        for a in 0..n {
            for b in 0..n {
                for p in 0..n {
                    for r in 0..n {
                        assert_eq!(ts.get(a, b, p, r), d(p == a && r == b));
                        assert_eq!(ti.get(a, b, p, r), d(a == 0 && b == 0 && p == r));
                    }
                }
            }
        }
    }

    #[test]
    fn kraus_of_standard_channels() {
        let ops = kraus_operators(&ChannelSpec::identity(3), Side::A).unwrap();
        assert_eq!(ops.len(), 1);
        assert!(max_abs(&(&ops[0] - ComplexMatrix::identity(3, 3))) < 1e-15);

        let ops = kraus_operators(&ChannelSpec::swap(3), Side::B).unwrap();
        let lam = sample_density(3, 5);
        assert!(max_abs(&(apply_kraus(&ops, lam.matrix()) - lam.matrix())) < 1e-15);
    }

    #[test]
    fn random_channel_kraus_completeness() {
        let ch = random_isometry_channel(2, 2, 3).unwrap();
        for side in [Side::A, Side::B] {
            let ops = kraus_operators(&ch, side).unwrap();
            assert!(kraus_completeness_residual(&ops, 2) <= 1e-12);
        }
    }

    #[test]
    fn random_isometry_contract() {
        for (n, dc, seed) in [(2, 1, 0), (3, 4, 1), (4, 2, 9)] {
            let ch = random_isometry_channel(n, dc, seed).unwrap();
            assert!(check_isometry(&ch).max() <= 1e-12);
            assert_eq!(ch, random_isometry_channel(n, dc, seed).unwrap());
        }
    }

    #[test]
    fn json_round_trip_and_shape_errors() {
        let ch = random_isometry_channel(3, 2, 4).unwrap();
        let back = ChannelSpec::from_json(&ch.to_json()).unwrap();
        assert_eq!(ch, back);
        let bad = r#"{"n":2,"dc":1,"c":[[[[[1,0]],[[0,0]]]]]}"#;
        assert!(matches!(ChannelSpec::from_json(bad), Err(ChannelError::ShapeMismatch(_))));
    }

    #[test]
    fn relabel_and_embed_preserve_isometry() {
        let ch = random_isometry_channel(3, 1, 6).unwrap();
        let moved = ch.relabel(&[2, 0, 1]).with_ancilla_dim(3);
        assert!(check_isometry(&moved).max() < 1e-14);
        let lam = sample_density(3, 2);
        let lt = source_map(&ch, lam.matrix());
        // relabelling commutes with the map up to the basis permutation
        let perm = [2usize, 0, 1];
        let lam_p = ComplexMatrix::from_fn(3, 3, |i, j| {
            let (pi, pj) = (perm.iter().position(|&x| x == i).unwrap(), perm.iter().position(|&x| x == j).unwrap());
            lam.get(pi, pj)
        });
        let lt_p = source_map(&moved, &lam_p);
        for i in 0..3 {
            for j in 0..3 {
                assert!((lt_p[(perm[i], perm[j])] - lt[(i, j)]).norm() < 1e-14);
            }
        }
        assert!(frobenius_norm(&lt) > 0.0);
    }
}
