//! Adam over the flattened dynamics block `(γ, x0, w, a1, b1)`, followed by
//! projection onto the constraint boxes.

use crate::error::{config_err, Error, Result};
use crate::gaussian::SimplexWeights;
use crate::model::{DwbParams, ObjectiveGrad};
use crate::simplex::{clamp_gamma, BetaMixtureHyper, InnovationSequence, GAMMA_EPS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err("adam.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(config_err("adam.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err("adam.beta2", "must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(config_err("adam.eps", "must be positive"));
        }
        Ok(())
    }
}

/// Moment accumulators for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub cfg: AdamConfig,
}

impl AdamState {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            cfg,
        }
    }

    /// Bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                expected: self.m.len(),
                found: if params.len() != self.m.len() { params.len() } else { grads.len() },
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite { term: "gradient", index: i });
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
        Ok(())
    }
}

/// Length of the flattened dynamics block for `T` windows and `K` states.
pub fn dynamics_len(t: usize, k: usize) -> usize {
    t * k + 4 * k
}

pub(crate) fn pack_params(p: &DwbParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(dynamics_len(p.seq.len(), p.seq.k()));
    out.extend_from_slice(p.seq.gammas());
    out.extend_from_slice(p.seq.x0().as_slice());
    out.extend_from_slice(&p.hyper.w);
    out.extend_from_slice(&p.hyper.a1);
    out.extend_from_slice(&p.hyper.b1);
    out
}

pub(crate) fn pack_grad(g: &ObjectiveGrad) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.gammas.len() + 4 * g.x0.len());
    out.extend_from_slice(&g.gammas);
    out.extend_from_slice(&g.x0);
    out.extend_from_slice(&g.hyper.w);
    out.extend_from_slice(&g.hyper.a1);
    out.extend_from_slice(&g.hyper.b1);
    out
}

/// Writes a flat vector back, clamping γ, projecting `x0` onto the simplex and
/// `H` into its boxes.
pub(crate) fn unpack_clamped(flat: &[f64], p: &mut DwbParams) {
    let k = p.seq.k();
    let tk = p.seq.gammas().len();
    let gammas: Vec<f64> = flat[..tk].iter().map(|&g| clamp_gamma(if g.is_nan() { GAMMA_EPS } else { g })).collect();
    let x0 = SimplexWeights::project(flat[tk..tk + k].iter().map(|x| x.clamp(0.0, 1.0)).collect());
    p.seq = InnovationSequence::from_parts_unchecked(x0.into_vec(), gammas);
    let h = &flat[tk + k..];
    p.hyper = BetaMixtureHyper {
        w: h[..k].to_vec(),
        a1: h[k..2 * k].to_vec(),
        b1: h[2 * k..3 * k].to_vec(),
    };
    p.hyper.clamp();
}

/// Checks every box constraint on the dynamics block.
pub fn dynamics_feasible(p: &DwbParams) -> bool {
    let x0 = p.seq.x0().as_slice();
    let sum: f64 = x0.iter().sum();
    p.seq.gammas().iter().all(|g| (GAMMA_EPS..=1.0 - GAMMA_EPS).contains(g))
        && x0.iter().all(|x| *x >= 0.0)
        && (sum - 1.0).abs() <= SimplexWeights::SUM_TOL
        && p.hyper.satisfies_constraints()
}

/// One Adam step on `(Γ, H)` followed by clamping.
pub fn adam_step(p: &mut DwbParams, grad: &ObjectiveGrad, state: &mut AdamState) -> Result<()> {
    let mut flat = pack_params(p);
    state.update(&mut flat, &pack_grad(grad))?;
    unpack_clamped(&flat, p);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianParams;
    use crate::model::PureStates;
    use crate::simplex::HyperGrad;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn params(t: usize, k: usize, gamma: f64) -> DwbParams {
        DwbParams {
            seq: InnovationSequence::constant(SimplexWeights::uniform(k), t, gamma).unwrap(),
            theta: PureStates::new(vec![GaussianParams::standard(1); k]).unwrap(),
            hyper: BetaMixtureHyper::initial(k),
        }
    }

    fn grad(t: usize, k: usize, v: f64) -> ObjectiveGrad {
        ObjectiveGrad {
            value: 0.0,
            gammas: vec![v; t * k],
            x0: vec![v; k],
            hyper: HyperGrad {
                w: vec![v; k],
                a1: vec![v; k],
                b1: vec![v; k],
            },
            means: vec![DVector::zeros(1); k],
            covs: vec![DMatrix::zeros(1, 1); k],
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = AdamState::new(1, AdamConfig::default());
        let mut x = [0.5];
        s.update(&mut x, &[1.0]).unwrap();
        assert_relative_eq!(0.5 - x[0], 2e-3 / (1.0 + 1e-8), max_relative = 1e-12);
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = params(4, 3, 0.2);
        let before = p.clone();
        let mut s = AdamState::new(dynamics_len(4, 3), AdamConfig::default());
        adam_step(&mut p, &grad(4, 3, 0.0), &mut s).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn gamma_stays_at_upper_clamp() {
        let mut p = params(2, 2, 0.999_999_9);
        let mut s = AdamState::new(dynamics_len(2, 2), AdamConfig::default());
        adam_step(&mut p, &grad(2, 2, -1.0), &mut s).unwrap();
        assert!(p.seq.gammas().iter().all(|g| *g == 1.0 - GAMMA_EPS));
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = params(2, 2, 0.1);
        let mut g = grad(2, 2, 0.0);
        g.gammas[3] = f64::NAN;
        let mut s = AdamState::new(dynamics_len(2, 2), AdamConfig::default());
        assert!(matches!(
            adam_step(&mut p, &g, &mut s),
            Err(Error::NonFinite { term: "gradient", index: 3 })
        ));
    }

    proptest! {
        #[test]
        fn updates_preserve_constraints(
            seed in proptest::collection::vec(-1e3f64..1e3, 6 * 3 + 12),
            steps in 1usize..20,
        ) {
            let mut p = params(6, 3, 0.3);
            let mut s = AdamState::new(dynamics_len(6, 3), AdamConfig { lr: 0.3, ..AdamConfig::default() });
            let g = ObjectiveGrad {
                value: 0.0,
                gammas: seed[..18].to_vec(),
                x0: seed[18..21].to_vec(),
                hyper: HyperGrad { w: seed[21..24].to_vec(), a1: seed[24..27].to_vec(), b1: seed[27..30].to_vec() },
                means: vec![DVector::zeros(1); 3],
                covs: vec![DMatrix::zeros(1, 1); 3],
            };
            for _ in 0..steps {
                adam_step(&mut p, &g, &mut s).unwrap();
                prop_assert!(dynamics_feasible(&p));
            }
        }
    }
}
