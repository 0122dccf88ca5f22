//! Sesquilinear forms in the channel amplitudes.
//!
//! Every quantity the optimizer touches (Gram entries, transfer coefficients,
//! entries of `Θ`) has the shape `Q(z) = Σ w · conj(z_α) z_β` over the flat
//! amplitude vector `z` of a [`ChannelSpec`]. Storing the term lists lets us
//! evaluate values, gradients and real Jacobians exactly.
//!
//! Gradients are packed as complex numbers: for a real function `f`,
//! `g_j = ∂f/∂Re z_j + i ∂f/∂Im z_j`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::ChannelSpec;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy)]
struct Term {
    alpha: u32,
    beta: u32,
    w: Complex64,
}

#[derive(Debug, Clone, Default)]
pub struct Form {
    terms: Vec<Term>,
}

impl Form {
    pub fn push(&mut self, alpha: usize, beta: usize, w: Complex64) {
        self.terms.push(Term {
            alpha: alpha as u32,
            beta: beta as u32,
            w,
        });
    }

    pub fn add_scaled(&mut self, other: &Form, s: Complex64) {
        self.terms
            .extend(other.terms.iter().map(|t| Term { w: t.w * s, ..*t }));
    }

    pub fn scaled(&self, s: Complex64) -> Form {
        let mut f = Form::default();
        f.add_scaled(self, s);
        f
    }

    pub fn eval(&self, z: &[Complex64]) -> Complex64 {
        self.terms
            .iter()
            .map(|t| t.w * z[t.alpha as usize].conj() * z[t.beta as usize])
            .sum()
    }

    /// Adds `scale · ∇ Re(conj(e) · Q)` (packed) to `g`, i.e. the gradient
    /// of `|Q - target|²` when `scale = 2` and `e = Q - target`.
    fn accumulate_gradient(&self, z: &[Complex64], e: Complex64, scale: f64, g: &mut [Complex64]) {
        for t in &self.terms {
            let (a, b) = (t.alpha as usize, t.beta as usize);
            g[a] += e.conj() * t.w * z[b] * scale;
            g[b] += e * t.w.conj() * z[a] * scale;
        }
    }

    /// Adds the (constant) real Hessian of `Re(c · Q)` to `h`.
    fn accumulate_hessian(&self, c: Complex64, h: &mut DMatrix<f64>) {
        for t in &self.terms {
            let (a, b) = (t.alpha as usize, t.beta as usize);
            let k = c * t.w;
            // Re(k conj(z_a) z_b) = k.re (x_a x_b + y_a y_b) - k.im (x_a y_b - y_a x_b)
            let (xa, ya, xb, yb) = (2 * a, 2 * a + 1, 2 * b, 2 * b + 1);
            for (i, j, v) in [(xa, xb, k.re), (ya, yb, k.re), (xa, yb, -k.im), (ya, xb, k.im)] {
                h[(i, j)] += v;
                h[(j, i)] += v;
            }
        }
    }

    /// Writes d(Re Q), d(Im Q) with respect to (Re z_j, Im z_j) into two rows.
    fn jacobian_rows(&self, z: &[Complex64], jac: &mut DMatrix<f64>, row: usize) {
        for t in &self.terms {
            let (a, b) = (t.alpha as usize, t.beta as usize);
            let u = t.w * z[b];
            let v = t.w * z[a].conj();
            // ∂Q/∂Re z_a = u, ∂Q/∂Im z_a = -i u
            jac[(row, 2 * a)] += u.re;
            jac[(row + 1, 2 * a)] += u.im;
            jac[(row, 2 * a + 1)] += u.im;
            jac[(row + 1, 2 * a + 1)] -= u.re;
            // ∂Q/∂Re z_b = v, ∂Q/∂Im z_b = i v
            jac[(row, 2 * b)] += v.re;
            jac[(row + 1, 2 * b)] += v.im;
            jac[(row, 2 * b + 1)] -= v.im;
            jac[(row + 1, 2 * b + 1)] += v.re;
        }
    }
}

/// A family of residuals `Q_i(z) - target_i`.
#[derive(Debug, Clone, Default)]
pub struct Residuals {
    forms: Vec<Form>,
    targets: Vec<Complex64>,
}

impl Residuals {
    pub fn push(&mut self, form: Form, target: Complex64) {
        self.forms.push(form);
        self.targets.push(target);
    }

    pub fn extend(&mut self, other: Residuals) {
        self.forms.extend(other.forms);
        self.targets.extend(other.targets);
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    pub fn values(&self, z: &[Complex64]) -> Vec<Complex64> {
        self.forms
            .iter()
            .zip(&self.targets)
            .map(|(f, t)| f.eval(z) - t)
            .collect()
    }

    pub fn max_abs(&self, z: &[Complex64]) -> f64 {
        self.values(z).iter().map(|e| e.norm()).fold(0.0, f64::max)
    }

    pub fn sum_sq(&self, z: &[Complex64]) -> f64 {
        self.values(z).iter().map(|e| e.norm_sqr()).sum()
    }

    /// Adds `scale · ∇ Σ|e_i|²` to `g`.
    pub fn add_gradient(&self, z: &[Complex64], scale: f64, g: &mut [Complex64]) {
        for (f, t) in self.forms.iter().zip(&self.targets) {
            let e = f.eval(z) - t;
            f.accumulate_gradient(z, e, 2.0 * scale, g);
        }
    }

    /// `Σ_i (Re e_i ∇² Re Q_i + Im e_i ∇² Im Q_i)`: the second-order part of
    /// the Hessian of `½ Σ|e_i|²` that Gauss–Newton drops.
    pub fn curvature(&self, z: &[Complex64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(2 * z.len(), 2 * z.len());
        for (f, t) in self.forms.iter().zip(&self.targets) {
            let e = f.eval(z) - t;
            f.accumulate_hessian(e.conj(), &mut h);
        }
        h
    }

    /// Real residual vector (Re, Im interleaved) and its Jacobian with
    /// respect to the real parameters (Re z_0, Im z_0, Re z_1, ...).
    pub fn jacobian(&self, z: &[Complex64]) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.forms.len();
        let mut r = DVector::zeros(2 * m);
        let mut jac = DMatrix::zeros(2 * m, 2 * z.len());
        for (i, (f, t)) in self.forms.iter().zip(&self.targets).enumerate() {
            let e = f.eval(z) - t;
            r[2 * i] = e.re;
            r[2 * i + 1] = e.im;
            f.jacobian_rows(z, &mut jac, 2 * i);
        }
        (r, jac)
    }
}

/// Flat index layout of [`ChannelSpec`] amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub dc: usize,
}

impl Layout {
    pub fn of(ch: &ChannelSpec) -> Layout {
        Layout {
            n: ch.n(),
            dc: ch.dc(),
        }
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n * self.dc
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, p: usize, k: usize, l: usize, m: usize) -> usize {
        ((p * self.n + k) * self.n + l) * self.dc + m
    }

    /// `⟨ψ_r|ψ_p⟩`
    pub fn gram(&self, r: usize, p: usize) -> Form {
        let mut f = Form::default();
        for k in 0..self.n {
            for l in 0..self.n {
                for m in 0..self.dc {
                    f.push(self.index(r, k, l, m), self.index(p, k, l, m), ONE);
                }
            }
        }
        f
    }

    /// Isometry residuals `⟨ψ_r|ψ_p⟩ - δ_rp` for `r <= p`.
    pub fn isometry(&self) -> Residuals {
        let mut res = Residuals::default();
        for r in 0..self.n {
            for p in r..self.n {
                let target = if r == p { ONE } else { Complex64::new(0.0, 0.0) };
                res.push(self.gram(r, p), target);
            }
        }
        res
    }

    /// `t[a][b][p][r] = Σ_k ⟨c^r_kb|c^p_ka⟩`
    pub fn transfer(&self, a: usize, b: usize, p: usize, r: usize) -> Form {
        let mut f = Form::default();
        for k in 0..self.n {
            for m in 0..self.dc {
                f.push(self.index(r, k, b, m), self.index(p, k, a, m), ONE);
            }
        }
        f
    }

    /// `(Θ_rp)_{k,nn} = Σ_l ⟨c^r_{nn,l}|c^p_{k,l}⟩`
    pub fn theta(&self, r: usize, p: usize, k: usize, nn: usize) -> Form {
        let mut f = Form::default();
        for l in 0..self.n {
            for m in 0..self.dc {
                f.push(self.index(r, nn, l, m), self.index(p, k, l, m), ONE);
            }
        }
        f
    }

    /// All entries of `∂λ̃/∂λ_ac = Θ_ca`; their squared sum is `‖Θ_ca‖²`.
    pub fn memory(&self, a: usize, c: usize) -> Residuals {
        let mut res = Residuals::default();
        for k in 0..self.n {
            for nn in 0..self.n {
                res.push(self.theta(c, a, k, nn), Complex64::new(0.0, 0.0));
            }
        }
        res
    }
}
