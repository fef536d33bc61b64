//! Dense symmetric-matrix helpers built on a single eigendecomposition.
//!
//! Matrix functions `f(S) = Q f(Λ) Qᵀ` and the adjoints of their Fréchet
//! derivatives (Daleckii–Krein form) are the building blocks for the
//! Bures distance, the barycenter fixed point and its reverse-mode gradient.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalues below this are clamped before taking roots.
pub const EIG_FLOOR: f64 = 1e-12;

/// Symmetric eigendecomposition `S = Q diag(λ) Qᵀ`.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    pub fn new(s: &DMatrix<f64>) -> Self {
        let sym = symmetrize(s);
        let eig = SymmetricEigen::new(sym);
        SymEig {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `Q diag(f(λ)) Qᵀ`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = self.dim();
        let q = &self.vectors;
        let mut scaled = q.clone();
        for j in 0..d {
            let fj = f(self.values[j]);
            for i in 0..d {
                scaled[(i, j)] *= fj;
            }
        }
        let out = &scaled * q.transpose();
        symmetrize(&out)
    }

    pub fn sqrt(&self) -> DMatrix<f64> {
        self.apply(|l| l.max(EIG_FLOOR).sqrt())
    }

    pub fn inv_sqrt(&self) -> DMatrix<f64> {
        self.apply(|l| 1.0 / l.max(EIG_FLOOR).sqrt())
    }

    /// Adjoint of the Fréchet derivative: given `Ḡ = ∂L/∂f(S)`, returns
    /// `∂L/∂S = Q (K ∘ (Qᵀ Ḡ Q)) Qᵀ` with the divided-difference kernel `K`.
    pub fn pullback(&self, gbar: &DMatrix<f64>, kernel: impl Fn(f64, f64) -> f64) -> DMatrix<f64> {
        let d = self.dim();
        let q = &self.vectors;
        let mut inner = q.transpose() * symmetrize(gbar) * q;
        for i in 0..d {
            for j in 0..d {
                inner[(i, j)] *= kernel(self.values[i], self.values[j]);
            }
        }
        symmetrize(&(q * inner * q.transpose()))
    }

    /// Pullback through `S ↦ S^½`.
    pub fn pullback_sqrt(&self, gbar: &DMatrix<f64>) -> DMatrix<f64> {
        self.pullback(gbar, sqrt_kernel)
    }

    /// Combined pullback through both `S^½` and `S^{-½}` sharing this decomposition.
    pub fn pullback_sqrt_pair(&self, gbar_sqrt: &DMatrix<f64>, gbar_isqrt: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let q = &self.vectors;
        let qt = q.transpose();
        let a = &qt * symmetrize(gbar_sqrt) * q;
        let b = &qt * symmetrize(gbar_isqrt) * q;
        let mut inner = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let (li, lj) = (self.values[i], self.values[j]);
                inner[(i, j)] = a[(i, j)] * sqrt_kernel(li, lj) + b[(i, j)] * inv_sqrt_kernel(li, lj);
            }
        }
        symmetrize(&(q * inner * qt))
    }
}

/// Divided difference of `√·`: `(√a − √b)/(a − b) = 1/(√a + √b)`.
#[inline]
pub fn sqrt_kernel(a: f64, b: f64) -> f64 {
    1.0 / (a.max(EIG_FLOOR).sqrt() + b.max(EIG_FLOOR).sqrt())
}

/// Divided difference of `1/√·`: `−1/(√a √b (√a + √b))`.
#[inline]
pub fn inv_sqrt_kernel(a: f64, b: f64) -> f64 {
    let (ra, rb) = (a.max(EIG_FLOOR).sqrt(), b.max(EIG_FLOOR).sqrt());
    -1.0 / (ra * rb * (ra + rb))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn sqrtm(s: &DMatrix<f64>) -> DMatrix<f64> {
    SymEig::new(s).sqrt()
}

pub fn inv_sqrtm(s: &DMatrix<f64>) -> DMatrix<f64> {
    SymEig::new(s).inv_sqrt()
}

/// Trace of `M^½` for symmetric PSD `M`.
pub fn trace_sqrt(m: &DMatrix<f64>) -> f64 {
    SymEig::new(m).values.iter().map(|&l| l.max(0.0).sqrt()).sum()
}

/// Frobenius inner product.
pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sqrt_of_diagonal() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = sqrtm(&s);
        assert_relative_eq!(r[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(r[(1, 1)], 3.0, epsilon = 1e-12);
        assert_relative_eq!(r[(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sqrt_pullback_matches_finite_difference() {
        let s = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0]);
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, -0.3, 0.5, 0.2, 0.7, -0.3, 0.7, -1.1]);
        let v = DMatrix::from_row_slice(3, 3, &[0.4, -0.1, 0.2, -0.1, 0.9, 0.05, 0.2, 0.05, -0.3]);
        let eig = SymEig::new(&s);
        let analytic = frob_dot(&eig.pullback_sqrt(&g), &v);
        let h = 1e-6;
        let fp = frob_dot(&g, &sqrtm(&(&s + &v * h)));
        let fm = frob_dot(&g, &sqrtm(&(&s - &v * h)));
        assert_relative_eq!(analytic, (fp - fm) / (2.0 * h), max_relative = 1e-7);
    }

    #[test]
    fn repeated_eigenvalues_have_finite_pullback() {
        let s = DMatrix::<f64>::identity(3, 3) * 2.0;
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let eig = SymEig::new(&s);
        let out = eig.pullback_sqrt_pair(&g, &g);
        assert!(out.iter().all(|x| x.is_finite()));
    }
}
