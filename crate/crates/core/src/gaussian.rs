//! Gaussian parameters and simplex weight vectors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{max_asymmetry, symmetrize, SymEig};

/// Mean vector plus symmetric positive-definite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianParams {
    /// Validates symmetry (relative 1e-12) and positive definiteness.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::EmptyInput("gaussian mean"));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: cov.nrows().max(cov.ncols()),
            });
        }
        if mean.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                term: "gaussian parameters",
                index: 0,
            });
        }
        let scale = cov.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        let asym = max_asymmetry(&cov);
        if asym > 1e-12 * scale {
            return Err(Error::NotSymmetric(asym));
        }
        let cov = symmetrize(&cov);
        let min_eig = SymEig::new(&cov).min_value();
        if min_eig <= 0.0 {
            return Err(Error::NotPositiveDefinite(min_eig));
        }
        Ok(GaussianParams { mean, cov })
    }

    /// Skips validation; callers guarantee the invariants (hot paths only).
    pub(crate) fn from_parts_unchecked(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        GaussianParams { mean, cov }
    }

    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * variance)
    }

    pub fn standard(d: usize) -> Self {
        GaussianParams {
            mean: DVector::zeros(d),
            cov: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }

    /// Log density via Cholesky; `None` if the covariance is numerically singular.
    pub fn log_density(&self, y: &[f64]) -> Option<f64> {
        Some(self.density()?.eval(y))
    }

    /// Precomputed evaluator for repeated log-density queries.
    pub fn density(&self) -> Option<LogDensity> {
        let d = self.dim();
        let l = self.cov.clone().cholesky()?.l();
        let log_det: f64 = l.diagonal().iter().map(|x| x.ln()).sum::<f64>() * 2.0;
        if !log_det.is_finite() {
            return None;
        }
        Some(LogDensity {
            mean: self.mean.clone(),
            l,
            constant: -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
        })
    }

    /// Appends `n` draws, row-major, to `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, out: &mut Vec<f64>) {
        let d = self.dim();
        let l = match self.cov.clone().cholesky() {
            Some(c) => c.l(),
            None => SymEig::new(&self.cov).sqrt(),
        };
        let mut z = DVector::zeros(d);
        out.reserve(n * d);
        for _ in 0..n {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let y = &l * &z + &self.mean;
            out.extend(y.iter());
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let mut out = Vec::new();
        self.sample_into(rng, n, &mut out);
        out
    }
}

/// Cached Cholesky factor of a Gaussian for fast log-density evaluation.
#[derive(Debug, Clone)]
pub struct LogDensity {
    mean: DVector<f64>,
    l: DMatrix<f64>,
    constant: f64,
}

impl LogDensity {
    pub fn eval(&self, y: &[f64]) -> f64 {
        let d = self.mean.len();
        // Forward substitution on L z = y − m.
        let mut z = [0.0f64; 16];
        let mut heap;
        let z: &mut [f64] = if d <= 16 {
            &mut z[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut q = 0.0;
        for i in 0..d {
            let mut v = y[i] - self.mean[i];
            for j in 0..i {
                v -= self.l[(i, j)] * z[j];
            }
            v /= self.l[(i, i)];
            z[i] = v;
            q += v * v;
        }
        self.constant - 0.5 * q
    }
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub const SUM_TOL: f64 = 1e-10;

    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::EmptyInput("simplex weights"));
        }
        if let Some(bad) = w.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::InvalidWeights(format!("entry {bad} is negative or non-finite")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::InvalidWeights(format!("entries sum to {sum}")));
        }
        Ok(SimplexWeights(w))
    }

    /// Clamps negatives to zero and rescales; a zero vector becomes uniform.
    pub fn project(mut w: Vec<f64>) -> Self {
        for x in w.iter_mut() {
            if !x.is_finite() || *x < 0.0 {
                *x = 0.0;
            }
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            let k = w.len().max(1);
            return SimplexWeights(vec![1.0 / k as f64; k]);
        }
        w.iter_mut().for_each(|x| *x /= sum);
        SimplexWeights(w)
    }

    pub(crate) fn from_vec_unchecked(w: Vec<f64>) -> Self {
        SimplexWeights(w)
    }

    pub fn uniform(k: usize) -> Self {
        SimplexWeights(vec![1.0 / k as f64; k])
    }

    pub fn vertex(k: usize, i: usize) -> Self {
        let mut w = vec![0.0; k];
        w[i] = 1.0;
        SimplexWeights(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for SimplexWeights {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indefinite_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            GaussianParams::new(DVector::zeros(2), cov),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn rejects_asymmetric_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.2, 1.0]);
        assert!(matches!(
            GaussianParams::new(DVector::zeros(2), cov),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(SimplexWeights::new(vec![0.5, 0.4]).is_err());
        assert!(SimplexWeights::new(vec![0.5, 0.5]).is_ok());
        assert!(SimplexWeights::new(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn sample_moments() {
        use rand::SeedableRng;
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let g = GaussianParams::new(DVector::from_vec(vec![1.0, -2.0]), cov.clone()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 40000;
        let x = g.sample(&mut rng, n);
        let m0 = x.iter().step_by(2).sum::<f64>() / n as f64;
        let m1 = x.iter().skip(1).step_by(2).sum::<f64>() / n as f64;
        assert!((m0 - 1.0).abs() < 0.03 && (m1 + 2.0).abs() < 0.03);
        let c01 = x.chunks(2).map(|p| (p[0] - m0) * (p[1] - m1)).sum::<f64>() / n as f64;
        assert!((c01 - 0.6).abs() < 0.04);
    }

    #[test]
    fn standard_normal_log_density_at_mode() {
        let g = GaussianParams::standard(2);
        let lp = g.log_density(&[0.0, 0.0]).unwrap();
        assert!((lp + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }
}
