//! Product geometry `R^d × Sym₊^d`: Euclidean on means, Bures–Wasserstein on
//! covariances.
//!
//! The metric is normalized so that `g_S(V, V)` is the squared Bures length of
//! the geodesic `t ↦ exp_S(tV)` per unit `t²`, i.e. `g_S(U, V) = ½ tr(L_S(U) V)`
//! where `L_S(U)` solves `L S + S L = U`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;
use crate::linalg::{frob_dot, max_asymmetry, symmetrize, SymEig};

/// Smallest eigenvalue accepted from the exponential map.
pub const SPD_FLOOR: f64 = 1e-10;

/// Points of the product manifold are Gaussian parameters.
pub type ManifoldPoint = GaussianParams;

/// Tangent vector at a point of the product manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductTangent {
    pub mean_dir: DVector<f64>,
    pub cov_dir: DMatrix<f64>,
}

impl ProductTangent {
    pub fn new(mean_dir: DVector<f64>, cov_dir: DMatrix<f64>) -> Result<Self> {
        let d = mean_dir.len();
        if cov_dir.nrows() != d || cov_dir.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: cov_dir.nrows(),
            });
        }
        let scale = cov_dir.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let asym = max_asymmetry(&cov_dir);
        if asym > 1e-12 * scale {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(ProductTangent {
            mean_dir,
            cov_dir: symmetrize(&cov_dir),
        })
    }

    pub fn zeros(d: usize) -> Self {
        ProductTangent {
            mean_dir: DVector::zeros(d),
            cov_dir: DMatrix::zeros(d, d),
        }
    }

    /// Squared norm `‖mean_dir‖² + g_S(cov_dir, cov_dir)` at `p`.
    pub fn norm_sq(&self, p: &ManifoldPoint) -> f64 {
        self.mean_dir.norm_squared() + bw_metric(p.cov(), &self.cov_dir, &self.cov_dir)
    }

    pub fn scaled(&self, a: f64) -> Self {
        ProductTangent {
            mean_dir: &self.mean_dir * a,
            cov_dir: &self.cov_dir * a,
        }
    }
}

fn lyapunov_in_basis(eig: &SymEig, v: &DMatrix<f64>) -> DMatrix<f64> {
    let q = &eig.vectors;
    let mut inner = q.transpose() * symmetrize(v) * q;
    let d = eig.dim();
    for i in 0..d {
        for j in 0..d {
            inner[(i, j)] /= eig.values[i] + eig.values[j];
        }
    }
    symmetrize(&(q * inner * q.transpose()))
}

/// Solves `L S + S L = V` in the eigenbasis of `S`.
pub fn lyapunov_solve(s: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    lyapunov_in_basis(&SymEig::new(s), v)
}

/// `exp_S(V) = (I + L) S (I + L)` with `L = lyapunov_solve(S, V)`.
///
/// Fails with [`Error::StepTooLarge`] when the result has an eigenvalue below
/// [`SPD_FLOOR`]; callers shrink the step.
pub fn bw_exp(s: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = s.nrows();
    if v.nrows() != d || v.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: v.nrows(),
        });
    }
    if v.iter().all(|x| *x == 0.0) {
        return Ok(s.clone());
    }
    let l = lyapunov_solve(s, v);
    let out = symmetrize(&(s + v + &l * s * &l));
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::StepTooLarge(f64::NAN));
    }
    let min = SymEig::new(&out).min_value();
    if min < SPD_FLOOR {
        return Err(Error::StepTooLarge(min));
    }
    Ok(out)
}

/// Riemannian inner product `½ tr(L_S(U) V)`.
pub fn bw_metric(s: &DMatrix<f64>, u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    0.5 * frob_dot(&lyapunov_solve(s, u), &symmetrize(v))
}

/// Riemannian gradient `2(E S + S E)` of a function with Euclidean gradient `E`.
pub fn riemannian_grad(s: &DMatrix<f64>, euclid_grad: &DMatrix<f64>) -> DMatrix<f64> {
    let e = symmetrize(euclid_grad);
    symmetrize(&((&e * s + s * &e) * 2.0))
}

/// Largest `t` with `I + t·L_S(V) ≻ 0`, the range on which `t ↦ exp_S(tV)` is a
/// minimizing geodesic. Infinite when `L_S(V)` is positive semidefinite.
pub fn geodesic_horizon(s: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let l = lyapunov_solve(s, v);
    let min = SymEig::new(&l).min_value();
    if min >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / min
    }
}

/// Moves `p` by `step·t`: Euclidean on the mean, `bw_exp` on the covariance.
pub fn product_step(p: &ManifoldPoint, t: &ProductTangent, step: f64) -> Result<ManifoldPoint> {
    if p.dim() != t.mean_dir.len() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: t.mean_dir.len(),
        });
    }
    if step == 0.0 {
        return Ok(p.clone());
    }
    let mean = p.mean() + &t.mean_dir * step;
    let cov = bw_exp(p.cov(), &(&t.cov_dir * step))?;
    Ok(GaussianParams::from_parts_unchecked(mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::{bures_sq, w2_gaussian};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spd(seed: &[f64], d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_iterator(d, d, seed.iter().cycle().take(d * d).cloned());
        &a * a.transpose() + DMatrix::identity(d, d) * 0.5
    }

    fn sym(seed: &[f64], d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_iterator(d, d, seed.iter().cycle().take(d * d).cloned());
        symmetrize(&a)
    }

    #[test]
    fn lyapunov_diagonal_example() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 4.0, 4.0, 6.0]);
        let l = lyapunov_solve(&s, &v);
        for x in l.iter() {
            assert_relative_eq!(*x, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn lyapunov_identity_halves() {
        let v = sym(&[0.3, -0.2, 0.9, 0.4], 2);
        let l = lyapunov_solve(&DMatrix::identity(2, 2), &v);
        assert!((l - &v * 0.5).norm() < 1e-12);
    }

    #[test]
    fn exp_of_zero_is_identity_map() {
        let s = spd(&[0.3, 0.1, -0.5, 0.8], 2);
        assert_eq!(bw_exp(&s, &DMatrix::zeros(2, 2)).unwrap(), s);
    }

    #[test]
    fn exp_scalar_multiple_of_identity() {
        let eps = 0.1;
        let out = bw_exp(&DMatrix::identity(3, 3), &(DMatrix::identity(3, 3) * eps)).unwrap();
        let expected = (1.0 + eps / 2.0) * (1.0 + eps / 2.0);
        assert!((out - DMatrix::identity(3, 3) * expected).norm() < 1e-12);
    }

    #[test]
    fn exp_rejects_leaving_the_cone() {
        let s = DMatrix::identity(2, 2);
        let v = DMatrix::identity(2, 2) * -2.0;
        assert!(matches!(bw_exp(&s, &v), Err(Error::StepTooLarge(_))));
    }

    #[test]
    fn scalar_calibration() {
        let t: f64 = 1e-3;
        let s = DMatrix::identity(1, 1);
        let v = DMatrix::identity(1, 1);
        let moved = bw_exp(&s, &(&v * t)).unwrap();
        let ratio = bures_sq(&s, &moved).unwrap() / (t * t * bw_metric(&s, &v, &v));
        assert_relative_eq!(ratio, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn riemannian_grad_at_identity_is_scaled_euclidean() {
        let e = sym(&[0.3, -0.2, 0.9, 0.4], 2);
        let g = riemannian_grad(&DMatrix::identity(2, 2), &e);
        assert!((g - &e * 4.0).norm() < 1e-12);
    }

    #[test]
    fn step_zero_and_mean_only() {
        let p = GaussianParams::new(DVector::from_vec(vec![1.0, 2.0]), spd(&[0.2, 0.4, 0.1, 0.3], 2)).unwrap();
        let t = ProductTangent::new(DVector::from_vec(vec![0.5, -1.0]), DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(product_step(&p, &t, 0.0).unwrap(), p);
        let q = product_step(&p, &t, 2.0).unwrap();
        assert_relative_eq!(w2_gaussian(&p, &q).unwrap(), 4.0 * 1.25, epsilon = 1e-12);
    }

    #[test]
    fn tangent_rejects_asymmetric() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
        assert!(ProductTangent::new(DVector::zeros(2), c).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn lyapunov_residual(
            (a, b, d) in (proptest::collection::vec(-1.0f64..1.0, 400), proptest::collection::vec(-1.0f64..1.0, 400), 1usize..=20)
        ) {
            let s = spd(&a[..d * d], d);
            let v = sym(&b[..d * d], d);
            let l = lyapunov_solve(&s, &v);
            prop_assert!((&l * &s + &s * &l - &v).norm() < 1e-10);
        }

        #[test]
        fn metric_calibration((a, b) in (proptest::collection::vec(-1.0f64..1.0, 9), proptest::collection::vec(-1.0f64..1.0, 9))) {
            let s = spd(&a, 3);
            let v = sym(&b, 3);
            let t = 1e-4;
            let g = bw_metric(&s, &v, &v);
            prop_assume!(g > 1e-6);
            let moved = bw_exp(&s, &(&v * t)).unwrap();
            let ratio = bures_sq(&s, &moved).unwrap() / (t * t * g);
            prop_assert!((ratio - 1.0).abs() < 1e-3);
        }

        #[test]
        fn metric_positive_and_bilinear(
            (a, b, c, x, y) in (
                proptest::collection::vec(-1.0f64..1.0, 9),
                proptest::collection::vec(-1.0f64..1.0, 9),
                proptest::collection::vec(-1.0f64..1.0, 9),
                -2.0f64..2.0,
                -2.0f64..2.0,
            )
        ) {
            let s = spd(&a, 3);
            let u = sym(&b, 3);
            let v = sym(&c, 3);
            prop_assert!(bw_metric(&s, &u, &u) >= 0.0);
            let lhs = bw_metric(&s, &(&u * x + &v * y), &v);
            let rhs = x * bw_metric(&s, &u, &v) + y * bw_metric(&s, &v, &v);
            prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
            prop_assert!((bw_metric(&s, &u, &v) - bw_metric(&s, &v, &u)).abs() < 1e-10);
        }

        #[test]
        fn riemannian_grad_defining_equation(
            (a, b, c) in (
                proptest::collection::vec(-1.0f64..1.0, 16),
                proptest::collection::vec(-1.0f64..1.0, 16),
                proptest::collection::vec(-1.0f64..1.0, 16),
            )
        ) {
            let s = spd(&a, 4);
            let e = sym(&b, 4);
            let v = sym(&c, 4);
            let g = riemannian_grad(&s, &e);
            let lhs = bw_metric(&s, &g, &v);
            let rhs = frob_dot(&e, &v);
            prop_assert!((lhs - rhs).abs() < 1e-8 * (1.0 + rhs.abs()));
        }

        #[test]
        fn descent_along_negative_gradient((a, b) in (proptest::collection::vec(-1.0f64..1.0, 9), proptest::collection::vec(-1.0f64..1.0, 9))) {
            // f(S) = 𝓑²(A, S) for a fixed target A.
            let target = spd(&a, 3);
            let s = spd(&b, 3);
            let f0 = bures_sq(&target, &s).unwrap();
            prop_assume!(f0 > 1e-6);
            let root = crate::linalg::sqrtm(&target);
            let (_, e) = crate::ot::bures_grad_second(&root, &s);
            let g = riemannian_grad(&s, &e);
            let moved = bw_exp(&s, &(&g * -1e-4)).unwrap();
            prop_assert!(bures_sq(&target, &moved).unwrap() < f0);
        }

        #[test]
        fn combined_move_expansion((a, b, m) in (proptest::collection::vec(-1.0f64..1.0, 4), proptest::collection::vec(-1.0f64..1.0, 4), proptest::collection::vec(-1.0f64..1.0, 2))) {
            let p = GaussianParams::new(DVector::zeros(2), spd(&a, 2)).unwrap();
            let t = ProductTangent::new(DVector::from_vec(m), sym(&b, 2)).unwrap();
            let n2 = t.norm_sq(&p);
            prop_assume!(n2 > 1e-6);
            let h = 1e-4;
            let q = product_step(&p, &t, h).unwrap();
            let ratio = w2_gaussian(&p, &q).unwrap() / (h * h * n2);
            prop_assert!((ratio - 1.0).abs() < 1e-3);
        }
    }
}
