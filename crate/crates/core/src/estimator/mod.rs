//! Coordinate descent: Adam on the dynamics block, then a line search on the
//! pure states, until an outer sweep improves the cost by at most `eta`.

mod adam;
mod init;
mod line_search;

pub use adam::{adam_step, dynamics_feasible, dynamics_len, AdamConfig, AdamState};
pub use init::{fit_gmm_em, initialize, kmeans, states_from_labels, Clustering, EmConfig, GmmFit, Initialization};
pub use line_search::{
    euclidean_cholesky_search, line_search, riemannian_line_search, FixedTrajectory, Geometry, LineSearchConfig,
    LineSearchReport, ThetaGrad, ThetaObjective,
};

use nalgebra::DMatrix;

use crate::error::{config_err, Error, Result};
use crate::exec::Parallelism;
use crate::gaussian::SimplexWeights;
use crate::model::{DwbParams, Emission, EmpiricalSequence, GradRequest, Objective, ObjectiveConfig, ThetaPriorConfig};
use crate::simplex::unroll;

/// Budget and stopping rule of the Adam block within one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerConfig {
    pub max_steps: usize,
    /// Steps between cost checks.
    pub sweep: usize,
    /// A sweep improving the cost by at most this much ends the block.
    pub eta: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            max_steps: 200,
            sweep: 10,
            eta: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub objective: ObjectiveConfig,
    pub adam: AdamConfig,
    pub inner: InnerConfig,
    pub line_search: LineSearchConfig,
    pub geometry: Geometry,
    pub eta: f64,
    pub max_outer: usize,
    /// Width of the pure-state prior.
    pub s: f64,
    pub parallelism: Parallelism,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            objective: ObjectiveConfig::default(),
            adam: AdamConfig::default(),
            inner: InnerConfig::default(),
            line_search: LineSearchConfig::default(),
            geometry: Geometry::BuresWasserstein,
            eta: 1e-4,
            max_outer: 100,
            s: 1.0,
            parallelism: Parallelism::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        self.adam.validate()?;
        self.line_search.validate()?;
        if self.inner.sweep == 0 {
            return Err(config_err("inner.sweep", "must be positive"));
        }
        if !(self.inner.eta >= 0.0) {
            return Err(config_err("inner.eta", "must be nonnegative"));
        }
        if !(self.eta >= 0.0) {
            return Err(config_err("eta", "must be nonnegative"));
        }
        if self.max_outer == 0 {
            return Err(config_err("max_outer", "must be positive"));
        }
        if !(self.s > 0.0) {
            return Err(config_err("s", "must be positive"));
        }
        Ok(())
    }
}

/// Diagnostics gathered during a fit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitFlags {
    /// Windows whose covariance was regularized.
    pub regularized_windows: Vec<usize>,
    pub duplicated_states: bool,
    /// Adam sweeps rolled back because they raised the cost.
    pub adam_rollbacks: usize,
    pub adam_steps: usize,
    pub line_search_stalls: usize,
    pub line_search_iterations: usize,
    /// Number of constraint checks performed after parameter updates.
    pub constraint_checks: usize,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: DwbParams,
    pub prior: ThetaPriorConfig,
    pub trajectory: Vec<SimplexWeights>,
    /// Emission at each window: barycenters, or mixtures in linear mode.
    pub emissions: Vec<Emission>,
    /// Cost before the first and after every outer iteration.
    pub cost_trace: Vec<f64>,
    pub converged: bool,
    pub flags: FitFlags,
}

impl FitReport {
    pub fn outer_iterations(&self) -> usize {
        self.cost_trace.len() - 1
    }

    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().unwrap()
    }
}

fn check_constraints(p: &DwbParams, flags: &mut FitFlags) -> Result<()> {
    flags.constraint_checks += 1;
    if !dynamics_feasible(p) {
        return Err(Error::InvariantViolation("dynamics parameters left their constraint boxes".into()));
    }
    Ok(())
}

/// Runs the Adam block in place; never returns with a higher cost than it
/// started from.
fn adam_block(obj: &Objective, p: &mut DwbParams, cfg: &FitConfig, cost: f64, flags: &mut FitFlags) -> Result<f64> {
    let n = dynamics_len(p.seq.len(), p.seq.k());
    let mut state = AdamState::new(n, cfg.adam);
    let mut cost = cost;
    let mut halved = false;
    let mut steps = 0;
    while steps < cfg.inner.max_steps {
        let saved = (p.clone(), state.clone());
        let len = cfg.inner.sweep.min(cfg.inner.max_steps - steps);
        for _ in 0..len {
            let g = obj.gradient(p, GradRequest::Dynamics)?;
            adam_step(p, &g, &mut state)?;
            check_constraints(p, flags)?;
        }
        steps += len;
        flags.adam_steps += len;
        let next = obj.value(p)?;
        if next > cost {
            *p = saved.0;
            state = saved.1;
            flags.adam_rollbacks += 1;
            if halved {
                break;
            }
            halved = true;
            state.cfg.lr *= 0.5;
            continue;
        }
        let improvement = cost - next;
        cost = next;
        if improvement <= cfg.inner.eta {
            break;
        }
    }
    Ok(cost)
}

/// Coordinate descent from a given starting point.
pub fn fit_from(
    data: &EmpiricalSequence,
    start: DwbParams,
    prior: ThetaPriorConfig,
    cfg: &FitConfig,
) -> Result<FitReport> {
    cfg.validate()?;
    let obj = Objective::new(data, cfg.objective, &prior)?.with_parallelism(cfg.parallelism);
    let mut p = start;
    let mut flags = FitFlags {
        regularized_windows: (0..data.len()).filter(|&t| data.regularized()[t]).collect(),
        ..FitFlags::default()
    };
    let mut cost = obj.value(&p)?;
    let mut trace = vec![cost];
    let mut converged = false;
    for outer in 0..cfg.max_outer {
        let after_adam = adam_block(&obj, &mut p, cfg, cost, &mut flags)?;
        let ls = line_search(&p.theta, &FixedTrajectory::new(&obj, &p), &cfg.line_search, cfg.geometry)?;
        flags.line_search_iterations += ls.iterations;
        flags.line_search_stalls += ls.stalled as usize;
        p.theta = ls.theta;
        let next = obj.value(&p)?;
        if next > cost + 1e-9 {
            return Err(Error::InvariantViolation(format!(
                "cost rose from {cost} to {next} in outer iteration {outer} (after Adam block: {after_adam})"
            )));
        }
        trace.push(next);
        let improvement = cost - next;
        cost = next;
        log::debug!("outer {outer}: cost {cost:.6} (improvement {improvement:.3e})");
        if improvement <= cfg.eta {
            converged = true;
            break;
        }
    }
    let trajectory = unroll(&p.seq);
    let emissions = obj.emissions(&p)?;
    Ok(FitReport {
        params: p,
        prior,
        trajectory,
        emissions,
        cost_trace: trace,
        converged,
        flags,
    })
}

/// Initializes from `series` (the raw samples behind `data`) and fits.
pub fn fit(
    data: &EmpiricalSequence,
    series: &DMatrix<f64>,
    k: usize,
    labels: Option<&[usize]>,
    cfg: &FitConfig,
    seed: u64,
) -> Result<FitReport> {
    cfg.validate()?;
    let init = initialize(series, data, k, labels, cfg.s, seed)?;
    let mut report = fit_from(data, init.params, init.prior, cfg)?;
    report.flags.duplicated_states = init.duplicated_states;
    Ok(report)
}
