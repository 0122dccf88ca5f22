//! Small dense complex linear algebra, density-matrix validation and seeded
//! sampling of random states and unitaries.
//!
//! Everything here works at desk scale (dimensions up to ~16), so matrices
//! are plain `nalgebra` dense matrices over `Complex64`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ComplexMatrix = DMatrix<Complex64>;

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensityError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("not Hermitian: max |m_ab - conj(m_ba)| = {violation:e}")]
    NotHermitian { violation: f64 },
    #[error("trace is not one: |tr - 1| = {violation:e}")]
    TraceNotOne { violation: f64 },
    #[error("not positive semidefinite: minimum eigenvalue {min_eigenvalue:e}")]
    NotPSD { min_eigenvalue: f64 },
}

/// Hermitian, positive semidefinite, trace-one matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "Vec<Vec<Complex64>>")]
pub struct DensityMatrix {
    mat: ComplexMatrix,
}

impl DensityMatrix {
    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.mat
    }

    /// Element `(a, b)`, zero-based.
    pub fn get(&self, a: usize, b: usize) -> Complex64 {
        self.mat[(a, b)]
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.mat)
    }

    /// `I / n`.
    pub fn maximally_mixed(n: usize) -> Self {
        let mut mat = ComplexMatrix::identity(n, n);
        mat.scale_mut(1.0 / n as f64);
        DensityMatrix { mat }
    }

    /// Projector onto basis vector `k` (zero-based).
    pub fn basis_projector(n: usize, k: usize) -> Self {
        let mut mat = ComplexMatrix::zeros(n, n);
        mat[(k, k)] = Complex64::new(1.0, 0.0);
        DensityMatrix { mat }
    }

    /// Convex combination `alpha * self + (1 - alpha) * other`.
    pub fn mix(&self, other: &DensityMatrix, alpha: f64) -> DensityMatrix {
        assert!((0.0..=1.0).contains(&alpha));
        let mat = self.mat.scale(alpha) + other.mat.scale(1.0 - alpha);
        DensityMatrix { mat: hermitian_part(&mat) }
    }
}

impl From<DensityMatrix> for Vec<Vec<Complex64>> {
    fn from(d: DensityMatrix) -> Self {
        matrix_to_rows(&d.mat)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<Complex64>>::deserialize(de)?;
        let m = matrix_from_rows(&rows).map_err(serde::de::Error::custom)?;
        validate_density(&m).map_err(serde::de::Error::custom)
    }
}

pub fn matrix_to_rows(m: &ComplexMatrix) -> Vec<Vec<Complex64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn matrix_from_rows(rows: &[Vec<Complex64>]) -> Result<ComplexMatrix, String> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err("empty matrix".into());
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".into());
    }
    Ok(ComplexMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn validate_density(m: &ComplexMatrix) -> Result<DensityMatrix, DensityError> {
    if m.nrows() != m.ncols() {
        return Err(DensityError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(DensityError::NonFinite);
    }
    let herm = hermiticity_violation(m);
    if herm > HERMITIAN_TOL {
        return Err(DensityError::NotHermitian { violation: herm });
    }
    let tr = (m.trace() - Complex64::new(1.0, 0.0)).norm();
    if tr > TRACE_TOL {
        return Err(DensityError::TraceNotOne { violation: tr });
    }
    let h = hermitian_part(m);
    let min_eig = hermitian_eigenvalues(&h)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -PSD_TOL {
        return Err(DensityError::NotPSD {
            min_eigenvalue: min_eig,
        });
    }
    Ok(DensityMatrix { mat: h })
}

/// max |m_ab - conj(m_ba)|
pub fn hermiticity_violation(m: &ComplexMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for a in 0..n {
        for b in a..n {
            worst = worst.max((m[(a, b)] - m[(b, a)].conj()).norm());
        }
    }
    worst
}

pub fn hermitian_part(m: &ComplexMatrix) -> ComplexMatrix {
    (m + m.adjoint()).scale(0.5)
}

pub fn frobenius_norm(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Ascending eigenvalues of a Hermitian matrix (only the Hermitian part is
/// used).
pub fn hermitian_eigenvalues(m: &ComplexMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = hermitian_part(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Eigendecomposition `m = V diag(w) V†` of the Hermitian part of `m`.
pub fn hermitian_eigen(m: &ComplexMatrix) -> (Vec<f64>, ComplexMatrix) {
    let eig = hermitian_part(m).symmetric_eigen();
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn complex_gaussian<R: rand::Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn ginibre<R: rand::Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ComplexMatrix {
    // Row-major draw order so the stream layout does not depend on nalgebra's storage.
    let mut entries = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        entries.push(complex_gaussian(rng));
    }
    ComplexMatrix::from_row_slice(rows, cols, &entries)
}

/// Random density matrix from the Hilbert–Schmidt measure, `G G† / tr(G G†)`.
pub fn sample_density(n: usize, seed: u64) -> DensityMatrix {
    assert!(n >= 2, "sample_density needs n >= 2");
    let mut rng = rng_from_seed(seed);
    sample_density_with(n, &mut rng)
}

pub fn sample_density_with<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> DensityMatrix {
    let g = ginibre(n, n, rng);
    let w = &g * g.adjoint();
    let tr = w.trace().re;
    let mat = hermitian_part(&w.unscale(tr));
    DensityMatrix { mat }
}

/// Haar-random unitary via QR of a Ginibre matrix with the phase fix on R's diagonal.
pub fn random_unitary<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> ComplexMatrix {
    let g = ginibre(n, n, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Random Hermitian matrix with Gaussian entries (GUE-like, unnormalized).
pub fn random_hermitian<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> ComplexMatrix {
    hermitian_part(&ginibre(n, n, rng))
}
