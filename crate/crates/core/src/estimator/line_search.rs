//! Armijo backtracking over the pure states, either on the Bures–Wasserstein
//! product manifold or on Cholesky factors with plain Euclidean steps.

use nalgebra::{DMatrix, DVector};

use crate::error::{config_err, Error, Result};
use crate::gaussian::{GaussianParams, SimplexWeights};
use crate::linalg::{frob_dot, symmetrize, SymEig};
use crate::manifold::{product_step, riemannian_grad, ProductTangent, SPD_FLOOR};
use crate::model::{DwbParams, Objective, PureStates};
use crate::simplex::unroll_flat;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    pub alpha0: f64,
    /// Sufficient-decrease constant.
    pub beta: f64,
    /// Contraction factor.
    pub c: f64,
    /// A sweep improving the cost by at most this much ends the search.
    pub eta: f64,
    pub max_sweeps: usize,
    /// Backtracking gives up below this step.
    pub min_alpha: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig {
            alpha0: 1e-1,
            beta: 1e-10,
            c: 0.5,
            eta: 0.05,
            max_sweeps: 500,
            min_alpha: 1e-16,
        }
    }
}

impl LineSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0) {
            return Err(config_err("line_search.alpha0", "must be positive"));
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(config_err("line_search.c", "must lie in (0, 1)"));
        }
        if !(self.beta > 0.0) {
            return Err(config_err("line_search.beta", "must be positive"));
        }
        if !(self.eta >= 0.0) {
            return Err(config_err("line_search.eta", "must be nonnegative"));
        }
        if self.max_sweeps == 0 {
            return Err(config_err("line_search.max_sweeps", "must be positive"));
        }
        Ok(())
    }
}

/// Gradient norms below this fraction of the cost count as stationary.
const STATIONARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Geometry {
    /// Euclidean means, Bures–Wasserstein covariances.
    BuresWasserstein,
    /// Covariances parameterized as `L Lᵀ` with Euclidean steps on `L`.
    EuclideanCholesky,
}

/// Value and Euclidean gradients of a function of the pure states.
#[derive(Debug, Clone)]
pub struct ThetaGrad {
    pub value: f64,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

pub trait ThetaObjective {
    fn value(&self, theta: &PureStates) -> Result<f64>;
    fn gradient(&self, theta: &PureStates) -> Result<ThetaGrad>;
}

/// The objective as a function of the pure states along a fixed trajectory.
pub struct FixedTrajectory<'o, 'a> {
    obj: &'o Objective<'a>,
    traj: Vec<f64>,
}

impl<'o, 'a> FixedTrajectory<'o, 'a> {
    /// Trajectory implied by the dynamics block of `params`.
    pub fn new(obj: &'o Objective<'a>, params: &DwbParams) -> Self {
        FixedTrajectory {
            obj,
            traj: unroll_flat(params.seq.x0().as_slice(), params.seq.gammas()),
        }
    }

    pub fn from_states(obj: &'o Objective<'a>, states: &[SimplexWeights]) -> Self {
        FixedTrajectory {
            obj,
            traj: states.iter().flat_map(|x| x.as_slice().iter().cloned()).collect(),
        }
    }
}

impl ThetaObjective for FixedTrajectory<'_, '_> {
    fn value(&self, theta: &PureStates) -> Result<f64> {
        Ok(self.obj.theta_cost(&self.traj, theta, false)?.value)
    }

    fn gradient(&self, theta: &PureStates) -> Result<ThetaGrad> {
        let c = self.obj.theta_cost(&self.traj, theta, true)?;
        Ok(ThetaGrad {
            value: c.value,
            means: c.means,
            covs: c.covs,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LineSearchReport {
    pub theta: PureStates,
    /// Accepted steps.
    pub steps: usize,
    /// Sweeps started, including a final one that found no acceptable step.
    pub iterations: usize,
    pub evaluations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Backtracking fell below the minimum step without acceptance.
    pub stalled: bool,
    /// Ended because a sweep improved the cost by at most `eta`.
    pub converged: bool,
}

/// Searches along the negative Riemannian gradient of the product manifold.
pub fn riemannian_line_search(
    theta: &PureStates,
    f: &dyn ThetaObjective,
    cfg: &LineSearchConfig,
) -> Result<LineSearchReport> {
    line_search(theta, f, cfg, Geometry::BuresWasserstein)
}

/// Same backtracking scheme on Cholesky factors.
pub fn euclidean_cholesky_search(
    theta: &PureStates,
    f: &dyn ThetaObjective,
    cfg: &LineSearchConfig,
) -> Result<LineSearchReport> {
    line_search(theta, f, cfg, Geometry::EuclideanCholesky)
}

/// Descent direction and its squared norm in the chosen geometry.
enum Direction {
    Manifold(Vec<ProductTangent>),
    Cholesky {
        factors: Vec<DMatrix<f64>>,
        means: Vec<DVector<f64>>,
        dirs: Vec<DMatrix<f64>>,
    },
}

fn lower(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.lower_triangle()
}

fn direction(theta: &PureStates, g: &ThetaGrad, geometry: Geometry) -> Result<(Direction, f64)> {
    let mut norm_sq = 0.0;
    match geometry {
        Geometry::BuresWasserstein => {
            let mut dirs = Vec::with_capacity(theta.k());
            for (k, st) in theta.states().iter().enumerate() {
                let e = symmetrize(&g.covs[k]);
                let rg = riemannian_grad(st.cov(), &e);
                // g_S(G, G) = ⟨E, G⟩ for G = 2(ES + SE).
                norm_sq += g.means[k].norm_squared() + frob_dot(&e, &rg);
                dirs.push(ProductTangent {
                    mean_dir: -&g.means[k],
                    cov_dir: -rg,
                });
            }
            Ok((Direction::Manifold(dirs), norm_sq))
        }
        Geometry::EuclideanCholesky => {
            let mut factors = Vec::with_capacity(theta.k());
            let mut dirs = Vec::with_capacity(theta.k());
            let mut means = Vec::with_capacity(theta.k());
            for (k, st) in theta.states().iter().enumerate() {
                let l = st
                    .cov()
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::NotPositiveDefinite(SymEig::new(st.cov()).min_value()))?
                    .l();
                let gl = lower(&(symmetrize(&g.covs[k]) * &l * 2.0));
                norm_sq += g.means[k].norm_squared() + gl.norm_squared();
                factors.push(l);
                dirs.push(-gl);
                means.push(-&g.means[k]);
            }
            Ok((Direction::Cholesky { factors, means, dirs }, norm_sq))
        }
    }
}

fn candidate(theta: &PureStates, dir: &Direction, alpha: f64) -> Result<PureStates> {
    let mut states = Vec::with_capacity(theta.k());
    match dir {
        Direction::Manifold(dirs) => {
            for (st, t) in theta.states().iter().zip(dirs) {
                states.push(product_step(st, t, alpha)?);
            }
        }
        Direction::Cholesky { factors, means, dirs } => {
            for (k, st) in theta.states().iter().enumerate() {
                let l = &factors[k] + &dirs[k] * alpha;
                let cov = symmetrize(&(&l * l.transpose()));
                let min = SymEig::new(&cov).min_value();
                if !(min >= SPD_FLOOR) {
                    return Err(Error::StepTooLarge(min));
                }
                states.push(GaussianParams::from_parts_unchecked(st.mean() + &means[k] * alpha, cov));
            }
        }
    }
    PureStates::new(states)
}

/// Armijo backtracking in the given geometry. Every accepted step strictly
/// decreases `f`.
pub fn line_search(
    theta: &PureStates,
    f: &dyn ThetaObjective,
    cfg: &LineSearchConfig,
    geometry: Geometry,
) -> Result<LineSearchReport> {
    cfg.validate()?;
    let mut current = theta.clone();
    let mut report = LineSearchReport {
        theta: theta.clone(),
        steps: 0,
        iterations: 0,
        evaluations: 0,
        initial_cost: f64::NAN,
        final_cost: f64::NAN,
        stalled: false,
        converged: false,
    };
    let mut fc = f64::NAN;
    while report.iterations < cfg.max_sweeps {
        report.iterations += 1;
        let g = f.gradient(&current)?;
        report.evaluations += 1;
        fc = g.value;
        if report.iterations == 1 {
            report.initial_cost = fc;
        }
        let (dir, norm_sq) = direction(&current, &g, geometry)?;
        if !norm_sq.is_finite() {
            return Err(Error::NonFinite {
                term: "pure-state gradient",
                index: report.iterations,
            });
        }
        if norm_sq.sqrt() <= STATIONARY_TOL * fc.abs().max(1.0) {
            report.converged = true;
            break;
        }
        let mut alpha = cfg.alpha0;
        let accepted = loop {
            if alpha < cfg.min_alpha {
                break None;
            }
            match candidate(&current, &dir, alpha) {
                Ok(next) => {
                    let fn_ = f.value(&next)?;
                    report.evaluations += 1;
                    if fc - fn_ > alpha * cfg.beta * norm_sq {
                        break Some((next, fn_));
                    }
                }
                Err(Error::StepTooLarge(_)) | Err(Error::NotPositiveDefinite(_)) => {}
                Err(e) => return Err(e),
            }
            alpha *= cfg.c;
        };
        match accepted {
            None => {
                report.stalled = true;
                break;
            }
            Some((next, fn_)) => {
                report.steps += 1;
                let decrease = fc - fn_;
                current = next;
                fc = fn_;
                if decrease <= cfg.eta {
                    report.converged = true;
                    break;
                }
            }
        }
    }
    report.final_cost = fc;
    report.theta = current;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// `Σ_k Σ_i w_ki ‖m_k − y_i‖² + Σ_k ‖S_k − A_k‖²_F`.
    struct Quadratic {
        points: Vec<DVector<f64>>,
        weights: Vec<Vec<f64>>,
        targets: Vec<DMatrix<f64>>,
    }

    impl ThetaObjective for Quadratic {
        fn value(&self, theta: &PureStates) -> Result<f64> {
            Ok(self.gradient(theta)?.value)
        }

        fn gradient(&self, theta: &PureStates) -> Result<ThetaGrad> {
            let mut value = 0.0;
            let mut means = Vec::new();
            let mut covs = Vec::new();
            for (k, st) in theta.states().iter().enumerate() {
                let mut gm = DVector::zeros(st.dim());
                for (y, w) in self.points.iter().zip(&self.weights[k]) {
                    let diff = st.mean() - y;
                    value += w * diff.norm_squared();
                    gm += diff * (2.0 * w);
                }
                let dc = st.cov() - &self.targets[k];
                value += dc.norm_squared();
                means.push(gm);
                covs.push(dc * 2.0);
            }
            Ok(ThetaGrad { value, means, covs })
        }
    }

    fn toy() -> (Quadratic, PureStates) {
        let points = vec![
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::from_vec(vec![2.0, -1.0]),
            DVector::from_vec(vec![4.0, 3.0]),
        ];
        let weights = vec![vec![0.2, 0.3, 0.5], vec![1.0, 0.5, 0.1]];
        let targets = vec![
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 0.5]),
        ];
        let start = PureStates::new(vec![GaussianParams::standard(2); 2]).unwrap();
        (Quadratic { points, weights, targets }, start)
    }

    fn weighted_mean(q: &Quadratic, k: usize) -> DVector<f64> {
        let total: f64 = q.weights[k].iter().sum();
        q.points
            .iter()
            .zip(&q.weights[k])
            .fold(DVector::zeros(2), |acc, (y, w)| acc + y * *w)
            / total
    }

    #[test]
    fn converges_to_closed_form_minimizer() {
        let (q, start) = toy();
        let cfg = LineSearchConfig {
            eta: 0.0,
            max_sweeps: 5000,
            ..LineSearchConfig::default()
        };
        for geometry in [Geometry::BuresWasserstein, Geometry::EuclideanCholesky] {
            let r = line_search(&start, &q, &cfg, geometry).unwrap();
            for k in 0..2 {
                let m = weighted_mean(&q, k);
                assert!((r.theta.states()[k].mean() - m).norm() < 1e-6, "{geometry:?}");
                assert!((r.theta.states()[k].cov() - &q.targets[k]).norm() < 1e-6, "{geometry:?}");
            }
        }
    }

    #[test]
    fn stationary_point_is_returned_unchanged() {
        let (q, _) = toy();
        let at_min = PureStates::new(
            (0..2)
                .map(|k| GaussianParams::new(weighted_mean(&q, k), q.targets[k].clone()).unwrap())
                .collect(),
        )
        .unwrap();
        for geometry in [Geometry::BuresWasserstein, Geometry::EuclideanCholesky] {
            let r = line_search(&at_min, &q, &LineSearchConfig::default(), geometry).unwrap();
            assert_eq!(r.iterations, 1);
            assert_eq!(r.steps, 0);
            assert_eq!(r.theta, at_min);
        }
    }

    #[test]
    fn costs_never_increase() {
        let (q, start) = toy();
        let r = riemannian_line_search(&start, &q, &LineSearchConfig::default()).unwrap();
        assert!(r.final_cost <= r.initial_cost);
        assert_relative_eq!(r.final_cost, q.value(&r.theta).unwrap(), max_relative = 1e-14);
    }
}
