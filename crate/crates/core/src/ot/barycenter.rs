use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianParams, SimplexWeights};
use crate::linalg::{frob_dot, symmetrize, SymEig};

use super::frob;

/// Fixed-point iterations used unless the caller asks otherwise.
pub const DEFAULT_FIXED_POINT_ITERS: usize = 10;

/// Components with weight below this are dropped from the public barycenter.
pub const WEIGHT_DROP: f64 = 1e-12;

/// Residual above which the fixed point is reported as not converged.
const CONVERGED_RESIDUAL: f64 = 1e-4;

/// Barycenter covariance and its stationarity diagnostics.
#[derive(Debug, Clone)]
pub struct BarycenterCov {
    pub cov: DMatrix<f64>,
    /// `‖Φ(S) − S‖_F` for one further application of the fixed-point map.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `Σ_k w[k] m_k`.
pub fn barycenter_mean(weights: &SimplexWeights, means: &[DVector<f64>]) -> Result<DVector<f64>> {
    if weights.len() != means.len() {
        return Err(Error::LengthMismatch {
            expected: weights.len(),
            found: means.len(),
        });
    }
    let d = means[0].len();
    let mut out = DVector::zeros(d);
    for (w, m) in weights.as_slice().iter().zip(means) {
        if m.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: m.len() });
        }
        out.axpy(*w, m, 1.0);
    }
    Ok(out)
}

/// One application of `S ↦ S^{-½} (Σ_k w_k (S^½ S_k S^½)^½)² S^{-½}`.
pub fn fixed_point_map(s: &DMatrix<f64>, weights: &[f64], covs: &[DMatrix<f64>]) -> DMatrix<f64> {
    let eig = SymEig::new(s);
    let r = eig.sqrt();
    let ri = eig.inv_sqrt();
    let d = s.nrows();
    let mut a = DMatrix::zeros(d, d);
    for (w, c) in weights.iter().zip(covs) {
        let m = symmetrize(&(&r * c * &r));
        a += SymEig::new(&m).sqrt() * *w;
    }
    symmetrize(&(&ri * &a * &a * &ri))
}

/// Starting point `(Σ_k w_k S_k^½)²`, exact when the covariances commute.
fn initial_guess(weights: &[f64], roots: &[DMatrix<f64>]) -> DMatrix<f64> {
    let d = roots[0].nrows();
    let mut c = DMatrix::zeros(d, d);
    for (w, r) in weights.iter().zip(roots) {
        c += r * *w;
    }
    symmetrize(&(&c * &c))
}

fn active_components(weights: &SimplexWeights, covs: &[DMatrix<f64>]) -> Result<(Vec<f64>, Vec<DMatrix<f64>>)> {
    if weights.len() != covs.len() {
        return Err(Error::LengthMismatch {
            expected: weights.len(),
            found: covs.len(),
        });
    }
    let d = covs[0].nrows();
    let mut w = Vec::new();
    let mut c = Vec::new();
    for (wk, ck) in weights.as_slice().iter().zip(covs) {
        if ck.nrows() != d || ck.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, found: ck.nrows() });
        }
        if *wk >= WEIGHT_DROP {
            w.push(*wk);
            c.push(ck.clone());
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Ok((w, c))
}

/// Wasserstein barycenter covariance by a fixed number of fixed-point steps.
pub fn barycenter_cov(weights: &SimplexWeights, covs: &[DMatrix<f64>], iters: usize) -> Result<BarycenterCov> {
    if iters == 0 {
        return Err(crate::error::config_err("iters", "must be positive"));
    }
    let (w, c) = active_components(weights, covs)?;
    if w.len() == 1 {
        return Ok(BarycenterCov {
            cov: c[0].clone(),
            residual: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let roots: Vec<_> = c.iter().map(|s| SymEig::new(s).sqrt()).collect();
    let mut s = initial_guess(&w, &roots);
    for _ in 0..iters {
        s = fixed_point_map(&s, &w, &c);
    }
    let next = fixed_point_map(&s, &w, &c);
    let residual = frob(&(&next - &s));
    if !residual.is_finite() {
        return Err(Error::NumericalDomain("barycenter fixed point diverged".into()));
    }
    let converged = residual <= CONVERGED_RESIDUAL;
    if !converged {
        log::warn!("barycenter fixed point residual {residual:e} after {iters} iterations");
    }
    Ok(BarycenterCov {
        cov: s,
        residual,
        iterations: iters,
        converged,
    })
}

/// Gaussian barycenter `ρ_B(x, {ρ_k})`.
pub fn barycenter(weights: &SimplexWeights, components: &[GaussianParams]) -> Result<GaussianParams> {
    barycenter_with_iters(weights, components, DEFAULT_FIXED_POINT_ITERS)
}

pub(crate) fn barycenter_with_iters(
    weights: &SimplexWeights,
    components: &[GaussianParams],
    iters: usize,
) -> Result<GaussianParams> {
    if components.is_empty() {
        return Err(Error::EmptyInput("barycenter components"));
    }
    let means: Vec<_> = components.iter().map(|g| g.mean().clone()).collect();
    let covs: Vec<_> = components.iter().map(|g| g.cov().clone()).collect();
    let mean = barycenter_mean(weights, &means)?;
    let cov = barycenter_cov(weights, &covs, iters)?.cov;
    Ok(GaussianParams::from_parts_unchecked(mean, cov))
}

/// Per-component square roots shared by every window of one evaluation.
#[derive(Debug, Clone)]
pub(crate) struct ComponentRoots {
    pub eigs: Vec<SymEig>,
    pub roots: Vec<DMatrix<f64>>,
}

impl ComponentRoots {
    pub fn new(covs: &[DMatrix<f64>]) -> Self {
        let eigs: Vec<_> = covs.iter().map(SymEig::new).collect();
        let roots = eigs.iter().map(|e| e.sqrt()).collect();
        ComponentRoots { eigs, roots }
    }
}

struct Step {
    eig: SymEig,
    r: DMatrix<f64>,
    ri: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    m_eigs: Vec<SymEig>,
    t: Vec<DMatrix<f64>>,
}

/// Recorded forward pass of the unrolled fixed point, for reverse-mode gradients.
///
/// Unlike [`barycenter_cov`], no component is dropped, so the derivative with
/// respect to a zero weight is still defined.
pub(crate) struct CovTape {
    c: DMatrix<f64>,
    steps: Vec<Step>,
    pub cov: DMatrix<f64>,
}

/// Gradients flowing out of [`CovTape::backward`].
pub(crate) struct CovTapeGrad {
    pub weights: Vec<f64>,
    pub covs: Vec<DMatrix<f64>>,
    /// Gradient with respect to `S_k^½` from the initial guess; pull back through the
    /// component square roots once per evaluation.
    pub roots: Vec<DMatrix<f64>>,
}

impl CovTape {
    pub fn forward(weights: &[f64], covs: &[DMatrix<f64>], roots: &ComponentRoots, iters: usize) -> Self {
        let c = {
            let d = covs[0].nrows();
            let mut c = DMatrix::zeros(d, d);
            for (w, r) in weights.iter().zip(&roots.roots) {
                c += r * *w;
            }
            c
        };
        let mut s = symmetrize(&(&c * &c));
        let mut steps = Vec::with_capacity(iters);
        for _ in 0..iters {
            let eig = SymEig::new(&s);
            let r = eig.sqrt();
            let ri = eig.inv_sqrt();
            let d = s.nrows();
            let mut a = DMatrix::zeros(d, d);
            let mut m_eigs = Vec::with_capacity(covs.len());
            let mut t = Vec::with_capacity(covs.len());
            for (w, ck) in weights.iter().zip(covs) {
                let m = symmetrize(&(&r * ck * &r));
                let me = SymEig::new(&m);
                let tk = me.sqrt();
                a += &tk * *w;
                m_eigs.push(me);
                t.push(tk);
            }
            let b = &a * &a;
            s = symmetrize(&(&ri * &b * &ri));
            steps.push(Step { eig, r, ri, a, b, m_eigs, t });
        }
        CovTape { c, steps, cov: s }
    }

    pub fn backward(
        &self,
        weights: &[f64],
        covs: &[DMatrix<f64>],
        roots: &ComponentRoots,
        gbar: &DMatrix<f64>,
    ) -> CovTapeGrad {
        let k = weights.len();
        let d = gbar.nrows();
        let mut wbar = vec![0.0; k];
        let mut cbar: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); k];
        let mut g = symmetrize(gbar);
        for st in self.steps.iter().rev() {
            // S' = Ri B Ri with B = A².
            let ri_bar = &g * &st.ri * &st.b + &st.b * &st.ri * &g;
            let b_bar = &st.ri * &g * &st.ri;
            let a_bar = &b_bar * &st.a + &st.a * &b_bar;
            let mut r_bar = DMatrix::zeros(d, d);
            for j in 0..k {
                wbar[j] += frob_dot(&a_bar, &st.t[j]);
                let m_bar = st.m_eigs[j].pullback_sqrt(&(&a_bar * weights[j]));
                r_bar += &m_bar * &st.r * &covs[j] + &covs[j] * &st.r * &m_bar;
                cbar[j] += &st.r * &m_bar * &st.r;
            }
            g = st.eig.pullback_sqrt_pair(&r_bar, &ri_bar);
        }
        // S0 = C², C = Σ w_k S_k^½.
        let c_bar = &g * &self.c + &self.c * &g;
        let mut root_bars = Vec::with_capacity(k);
        for j in 0..k {
            wbar[j] += frob_dot(&c_bar, &roots.roots[j]);
            root_bars.push(&c_bar * weights[j]);
        }
        CovTapeGrad {
            weights: wbar,
            covs: cbar,
            roots: root_bars,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::barycentric_objective;
    use approx::assert_relative_eq;

    fn spd(vals: &[f64], d: usize, shift: f64) -> DMatrix<f64> {
        let a = DMatrix::from_iterator(d, d, vals.iter().cycle().take(d * d).cloned());
        &a * a.transpose() + DMatrix::identity(d, d) * shift
    }

    #[test]
    fn vertex_weight_returns_component() {
        let covs = vec![spd(&[0.2, 0.5, -0.3, 0.9], 2, 0.5), spd(&[1.0, -0.1, 0.4, 0.3], 2, 0.2)];
        let w = SimplexWeights::vertex(2, 1);
        let out = barycenter_cov(&w, &covs, 10).unwrap();
        assert!((&out.cov - &covs[1]).abs().max() < 1e-14);
    }

    #[test]
    fn scalar_case_averages_roots() {
        let covs = vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 9.0)];
        let w = SimplexWeights::new(vec![0.5, 0.5]).unwrap();
        let out = barycenter_cov(&w, &covs, 10).unwrap();
        assert_relative_eq!(out.cov[(0, 0)], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn barycenter_beats_components_and_linear_mix() {
        let covs = vec![
            spd(&[0.3, -0.8, 0.1, 0.6, 0.2, -0.4, 0.9, 0.05, -0.2, 0.7, 0.3, 0.1, -0.5, 0.4, 0.2, 0.6], 4, 0.2),
            spd(&[1.1, 0.2, -0.3, 0.4, -0.6, 0.8, 0.1, 0.2, 0.5, -0.1, 0.3, 0.9, 0.2, 0.4, -0.7, 0.3], 4, 0.1),
            spd(&[0.5, 0.5, 0.1, -0.2, 0.3, 0.6, -0.9, 0.4, 0.2, 0.1, 0.8, -0.3, 0.6, 0.2, 0.1, 0.4], 4, 0.3),
        ];
        let w = SimplexWeights::new(vec![0.2, 0.3, 0.5]).unwrap();
        let out = barycenter_cov(&w, &covs, 10).unwrap();
        let at = barycentric_objective(w.as_slice(), &covs, &out.cov).unwrap();
        for c in &covs {
            assert!(at <= barycentric_objective(w.as_slice(), &covs, c).unwrap());
        }
        let mut lin = DMatrix::zeros(4, 4);
        for (wk, c) in w.as_slice().iter().zip(&covs) {
            lin += c * *wk;
        }
        assert!(at <= barycentric_objective(w.as_slice(), &covs, &lin).unwrap());
    }

    #[test]
    fn tiny_weights_are_dropped() {
        let covs = vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 9.0)];
        let w = SimplexWeights::new(vec![1.0 - 1e-13, 1e-13]).unwrap();
        let out = barycenter_cov(&w, &covs, 10).unwrap();
        assert_eq!(out.cov[(0, 0)], 1.0);
    }

    #[test]
    fn tape_matches_public_fixed_point() {
        let covs = vec![spd(&[0.2, 0.5, -0.3, 0.9], 2, 0.5), spd(&[1.0, -0.1, 0.4, 0.3], 2, 0.2)];
        let w = vec![0.35, 0.65];
        let roots = ComponentRoots::new(&covs);
        let tape = CovTape::forward(&w, &covs, &roots, 10);
        let public = barycenter_cov(&SimplexWeights::new(w.clone()).unwrap(), &covs, 10).unwrap();
        assert!((&tape.cov - &public.cov).abs().max() < 1e-12);
    }

    /// Full reverse pass (including the initial-guess roots) against central differences.
    #[test]
    fn tape_gradient_matches_finite_difference() {
        let covs = vec![
            spd(&[0.2, 0.5, -0.3, 0.9, 0.1, 0.4, -0.2, 0.3, 0.6], 3, 0.5),
            spd(&[1.0, -0.1, 0.4, 0.3, 0.2, -0.5, 0.7, 0.1, 0.2], 3, 0.2),
            spd(&[0.3, 0.3, 0.1, -0.6, 0.8, 0.2, 0.1, 0.4, -0.1], 3, 0.4),
        ];
        let w = vec![0.2, 0.5, 0.3];
        let probe = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, 0.5, 0.1, -0.2, 0.1, -0.7]);
        let f = |w: &[f64], covs: &[DMatrix<f64>]| {
            let roots = ComponentRoots::new(covs);
            frob_dot(&probe, &CovTape::forward(w, covs, &roots, 10).cov)
        };
        let roots = ComponentRoots::new(&covs);
        let tape = CovTape::forward(&w, &covs, &roots, 10);
        let grad = tape.backward(&w, &covs, &roots, &probe);
        let h = 1e-6;
        for j in 0..3 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            let fd = (f(&wp, &covs) - f(&wm, &covs)) / (2.0 * h);
            assert_relative_eq!(grad.weights[j], fd, max_relative = 1e-6);
        }
        let v = DMatrix::from_row_slice(3, 3, &[0.3, -0.2, 0.1, -0.2, 0.4, 0.25, 0.1, 0.25, -0.5]);
        for j in 0..3 {
            let mut cp = covs.clone();
            let mut cm = covs.clone();
            cp[j] += &v * h;
            cm[j] -= &v * h;
            let fd = (f(&w, &cp) - f(&w, &cm)) / (2.0 * h);
            let total = &grad.covs[j] + roots.eigs[j].pullback_sqrt(&grad.roots[j]);
            assert_relative_eq!(frob_dot(&total, &v), fd, max_relative = 1e-6);
        }
    }
}
