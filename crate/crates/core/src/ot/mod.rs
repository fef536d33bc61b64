//! Closed-form Wasserstein-2 geometry of Gaussians, Gaussian barycenters,
//! and an exact discrete optimal-transport solver used as a sampling oracle.

mod assignment;
mod barycenter;
mod discrete;
mod kdtree;

pub use barycenter::{
    barycenter, barycenter_cov, barycenter_mean, fixed_point_map, BarycenterCov,
    DEFAULT_FIXED_POINT_ITERS, WEIGHT_DROP,
};
pub(crate) use barycenter::{barycenter_with_iters, ComponentRoots, CovTape};
pub use discrete::{ot_discrete, ot_discrete_with, DiscreteCoupling, OtOptions, PointCloud, Solver};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gaussian::GaussianParams;
use crate::linalg::{frob_dot, symmetrize, SymEig};

/// Squared Bures distance `tr a + tr b − 2 tr (a^½ b a^½)^½`.
pub fn bures_sq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() || a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: b.nrows(),
        });
    }
    let ra = SymEig::new(a).sqrt();
    bures_sq_with_root(&ra, a.trace(), b)
}

/// Same as [`bures_sq`] with `a^½` supplied by the caller.
pub fn bures_sq_with_root(root_a: &DMatrix<f64>, trace_a: f64, b: &DMatrix<f64>) -> Result<f64> {
    let m = symmetrize(&(root_a * b * root_a));
    let eig = SymEig::new(&m);
    if eig.values.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalDomain("non-finite eigenvalue in Bures cross term".into()));
    }
    if eig.min_value() < -1e-8 * eig.max_value().abs().max(1.0) {
        return Err(Error::NumericalDomain(format!(
            "cross term has negative eigenvalue {:e}",
            eig.min_value()
        )));
    }
    let cross: f64 = eig.values.iter().map(|&l| l.max(0.0).sqrt()).sum();
    Ok((trace_a + b.trace() - 2.0 * cross).max(0.0))
}

/// Euclidean gradient of `b ↦ 𝓑²(a, b)` given `a^½`: `I − a^½ (a^½ b a^½)^{-½} a^½`.
pub(crate) fn bures_grad_second(root_a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let d = b.nrows();
    let m = symmetrize(&(root_a * b * root_a));
    let eig = SymEig::new(&m);
    let cross: f64 = eig.values.iter().map(|&l| l.max(0.0).sqrt()).sum();
    let mis = eig.inv_sqrt();
    let grad = DMatrix::identity(d, d) - root_a * mis * root_a;
    (cross, symmetrize(&grad))
}

/// Squared 2-Wasserstein distance between Gaussians.
pub fn w2_gaussian(a: &GaussianParams, b: &GaussianParams) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let e2 = (a.mean() - b.mean()).norm_squared();
    Ok(e2 + bures_sq(a.cov(), b.cov())?)
}

/// Objective `Σ_k w_k 𝓑²(S_k, S)` minimized by the barycenter covariance.
pub fn barycentric_objective(weights: &[f64], covs: &[DMatrix<f64>], s: &DMatrix<f64>) -> Result<f64> {
    let rs = SymEig::new(s).sqrt();
    let tr = s.trace();
    let mut total = 0.0;
    for (w, c) in weights.iter().zip(covs) {
        total += w * bures_sq_with_root(&rs, tr, c)?;
    }
    Ok(total)
}

pub(crate) fn frob(a: &DMatrix<f64>) -> f64 {
    frob_dot(a, a).sqrt()
}
