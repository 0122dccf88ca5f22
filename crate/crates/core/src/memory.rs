//! Memory of the final source state on the initial matrix elements.
//!
//! The final state of A is linear in the initial one,
//! `λ̃ = Σ_{p,r} λ_pr Θ_rp` with `(Θ_rp)_{kn} = Σ_l ⟨c^r_nl|c^p_kl⟩`.
//! Treating `λ_ac` and its conjugate as independent variables (Wirtinger
//! calculus), `∂λ̃/∂λ_ac = Θ_ca`, and the memory on `λ_ac` is the Frobenius
//! norm of that matrix. Because `Θ_ca = Θ_ac†` the two index orders give the
//! same number.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::channel::{source_map, ChannelSpec};
use crate::qcore::{frobenius_norm, ComplexMatrix, DensityMatrix};

pub const MIN_FD_STEP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("finite-difference step {0:e} is below {MIN_FD_STEP:e}")]
    StepTooSmall(f64),
    #[error("element ({a}, {c}) is diagonal; the derivative oracle needs a != c")]
    DiagonalElement { a: usize, c: usize },
    #[error("index out of range for n = {n}")]
    IndexOutOfRange { n: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaTensor {
    n: usize,
    theta: Vec<ComplexMatrix>,
}

impl ThetaTensor {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `Θ_rp`, the coefficient of `λ_pr` in `λ̃`.
    pub fn get(&self, r: usize, p: usize) -> &ComplexMatrix {
        &self.theta[r * self.n + p]
    }

    /// `∂λ̃/∂λ_ac`
    pub fn derivative(&self, a: usize, c: usize) -> &ComplexMatrix {
        self.get(c, a)
    }

    /// `Σ_{p,r} λ_pr Θ_rp` for any input matrix.
    pub fn reconstruct(&self, lam: &ComplexMatrix) -> ComplexMatrix {
        let n = self.n;
        let mut out = ComplexMatrix::zeros(n, n);
        for p in 0..n {
            for r in 0..n {
                out += self.get(r, p).scale(1.0) * lam[(p, r)];
            }
        }
        out
    }
}

pub fn theta_tensor(ch: &ChannelSpec) -> ThetaTensor {
    let n = ch.n();
    let mut theta = Vec::with_capacity(n * n);
    for r in 0..n {
        for p in 0..n {
            theta.push(ComplexMatrix::from_fn(n, n, |k, nn| {
                (0..n).map(|l| ch.inner(r, nn, l, p, k, l)).sum()
            }));
        }
    }
    ThetaTensor { n, theta }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Offdiag,
    Diag,
    DiagDiff,
}

impl MemoryKind {
    fn as_str(self) -> &'static str {
        match self {
            MemoryKind::Offdiag => "offdiag",
            MemoryKind::Diag => "diag",
            MemoryKind::DiagDiff => "diag_diff",
        }
    }
}

/// One table row with one-based indices, as written to CSV/JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryRow {
    pub a: usize,
    pub c: usize,
    pub norm: f64,
    pub kind: MemoryKind,
}

/// `‖Θ_ca‖` for every `(a, c)` plus `‖Θ_aa − Θ_bb‖` for `a < b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryTable {
    n: usize,
    memory: Vec<f64>,
    diag_diff: Vec<f64>,
}

impl MemoryTable {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Memory on `λ_ac` (zero-based indices).
    pub fn entry(&self, a: usize, c: usize) -> f64 {
        self.memory[a * self.n + c]
    }

    /// `‖Θ_aa − Θ_bb‖` (zero-based, symmetric).
    pub fn diag_diff(&self, a: usize, b: usize) -> f64 {
        self.diag_diff[a * self.n + b]
    }

    pub fn max_offdiag(&self) -> f64 {
        let n = self.n;
        (0..n)
            .flat_map(|a| (0..n).filter(move |&c| c != a).map(move |c| (a, c)))
            .map(|(a, c)| self.entry(a, c))
            .fold(0.0, f64::max)
    }

    pub fn max_entry(&self) -> f64 {
        self.memory.iter().copied().fold(0.0, f64::max)
    }

    pub fn rows(&self) -> Vec<MemoryRow> {
        let n = self.n;
        let mut rows = Vec::with_capacity(n * n + n * (n - 1) / 2);
        for a in 0..n {
            for c in 0..n {
                rows.push(MemoryRow {
                    a: a + 1,
                    c: c + 1,
                    norm: self.entry(a, c),
                    kind: if a == c { MemoryKind::Diag } else { MemoryKind::Offdiag },
                });
            }
        }
        for a in 0..n {
            for b in a + 1..n {
                rows.push(MemoryRow {
                    a: a + 1,
                    c: b + 1,
                    norm: self.diag_diff(a, b),
                    kind: MemoryKind::DiagDiff,
                });
            }
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("a,c,norm,kind\n");
        for r in self.rows() {
            out.push_str(&format!("{},{},{:e},{}\n", r.a, r.c, r.norm, r.kind.as_str()));
        }
        out
    }
}

impl Serialize for MemoryTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Out {
            n: usize,
            rows: Vec<MemoryRow>,
        }
        Out {
            n: self.n,
            rows: self.rows(),
        }
        .serialize(s)
    }
}

pub fn memory_table(ch: &ChannelSpec) -> MemoryTable {
    memory_table_from(&theta_tensor(ch))
}

pub fn memory_table_from(theta: &ThetaTensor) -> MemoryTable {
    let n = theta.n;
    let mut memory = vec![0.0; n * n];
    let mut diag_diff = vec![0.0; n * n];
    for a in 0..n {
        for c in 0..n {
            memory[a * n + c] = frobenius_norm(theta.derivative(a, c));
            diag_diff[a * n + c] = frobenius_norm(&(theta.get(a, a) - theta.get(c, c)));
        }
    }
    MemoryTable {
        n,
        memory,
        diag_diff,
    }
}

/// `½‖Θ_ba + Θ_ab‖`: for Hermitian λ this is half the derivative of λ̃ with
/// respect to `Re λ_ab`. Zero-based.
pub fn real_part_memory(theta: &ThetaTensor, a: usize, b: usize) -> f64 {
    0.5 * frobenius_norm(&(theta.get(b, a) + theta.get(a, b)))
}

/// `½‖Θ_ba − Θ_ab‖`, the counterpart for `Im λ_ab`. Zero-based.
pub fn imag_part_memory(theta: &ThetaTensor, a: usize, b: usize) -> f64 {
    0.5 * frobenius_norm(&(theta.get(b, a) - theta.get(a, b)))
}

/// Central-difference Wirtinger derivative `½(∂/∂Re λ_ac − i ∂/∂Im λ_ac)` of
/// λ → λ̃, taken at the maximally mixed state with `λ_ca` moved conjugately.
/// Zero-based indices. This goes through the partial-trace route, not `Θ`.
pub fn wirtinger_fd(ch: &ChannelSpec, a: usize, c: usize, h: f64) -> Result<ComplexMatrix, MemoryError> {
    let n = ch.n();
    if a >= n || c >= n {
        return Err(MemoryError::IndexOutOfRange { n });
    }
    if a == c {
        return Err(MemoryError::DiagonalElement { a, c });
    }
    if h.is_nan() || h < MIN_FD_STEP {
        return Err(MemoryError::StepTooSmall(h));
    }
    let base = DensityMatrix::maximally_mixed(n).into_matrix();
    let direction = |z: Complex64| {
        let mut e = ComplexMatrix::zeros(n, n);
        e[(a, c)] = z;
        e[(c, a)] = z.conj();
        e
    };
    let central = |e: ComplexMatrix| {
        let plus = source_map(ch, &(&base + &e));
        let minus = source_map(ch, &(&base - &e));
        (plus - minus).unscale(2.0 * h)
    };
    let d_re = central(direction(Complex64::new(h, 0.0)));
    let d_im = central(direction(Complex64::new(0.0, h)));
    Ok((d_re - d_im * Complex64::i()).scale(0.5))
}
