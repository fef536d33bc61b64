//! Windowed empirical Gaussians, pure-state emissions, priors and the full
//! objective `F(Γ, Θ, H) = −log p(γ | H) − log p(Θ) + λ Σ_t fit_t` with its
//! gradient.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::function::erf::erf;

use crate::error::{config_err, Error, Result};
use crate::exec::Parallelism;
use crate::gaussian::{GaussianParams, SimplexWeights};
use crate::linalg::{symmetrize, SymEig};
use crate::ot::{barycenter_with_iters, bures_grad_second, w2_gaussian, ComponentRoots, CovTape};
use crate::simplex::{
    log_prior_innovations_grad, log_prior_innovations_single_grad, unroll_backward, unroll_flat, BetaMixtureHyper,
    HyperGrad, InnovationSequence,
};

/// Sliding windows of `2n + 1` samples with stride `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub n: usize,
    pub delta: usize,
}

impl WindowConfig {
    pub fn new(n: usize, delta: usize) -> Result<Self> {
        if n == 0 {
            return Err(config_err("n", "half-width must be at least 1"));
        }
        if delta == 0 {
            return Err(config_err("delta", "stride must be at least 1"));
        }
        Ok(WindowConfig { n, delta })
    }

    /// Bee-trajectory preset.
    pub fn bt() -> Self {
        WindowConfig { n: 100, delta: 25 }
    }

    /// Accelerometer preset.
    pub fn msr() -> Self {
        WindowConfig { n: 250, delta: 125 }
    }

    pub fn length(&self) -> usize {
        2 * self.n + 1
    }

    /// Number of complete windows in a series of `len` samples.
    pub fn count(&self, len: usize) -> usize {
        if len < self.length() {
            0
        } else {
            (len - self.length()) / self.delta + 1
        }
    }

    /// Zero-based index of the first sample of window `t`.
    pub fn start(&self, t: usize) -> usize {
        t * self.delta
    }
}

/// Per-window unbiased Gaussian estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSequence {
    windows: Vec<GaussianParams>,
    config: WindowConfig,
    source_length: usize,
    regularized: Vec<bool>,
}

impl EmpiricalSequence {
    /// Builds a sequence from already-estimated windows (e.g. for tests).
    pub fn from_windows(windows: Vec<GaussianParams>, config: WindowConfig, source_length: usize) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::EmptyInput("window sequence"));
        }
        let d = windows[0].dim();
        if let Some(w) = windows.iter().find(|w| w.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: w.dim() });
        }
        let regularized = vec![false; windows.len()];
        Ok(EmpiricalSequence {
            windows,
            config,
            source_length,
            regularized,
        })
    }

    pub fn windows(&self) -> &[GaussianParams] {
        &self.windows
    }

    pub fn config(&self) -> WindowConfig {
        self.config
    }

    pub fn source_length(&self) -> usize {
        self.source_length
    }

    /// Windows whose covariance was rank deficient and got regularized.
    pub fn regularized(&self) -> &[bool] {
        &self.regularized
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.windows[0].dim()
    }
}

const RANK_TOL: f64 = 1e-10;
const REGULARIZATION: f64 = 1e-8;

/// Windows `y[δt .. δt + 2n + 1]` of a `𝒯 × d` series: mean with divisor
/// `2n + 1`, covariance with divisor `2n`. Rank-deficient covariances get
/// `1e-8 · (tr/d) · I` added and are flagged.
pub fn window_series(y: &DMatrix<f64>, cfg: WindowConfig) -> Result<EmpiricalSequence> {
    let (len, d) = y.shape();
    if d == 0 {
        return Err(Error::EmptyInput("series columns"));
    }
    if len < cfg.length() {
        return Err(Error::InsufficientSamples {
            need: cfg.length(),
            have: len,
        });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            term: "series",
            index: i % len,
        });
    }
    let count = cfg.count(len);
    let m = cfg.length();
    let mut windows = Vec::with_capacity(count);
    let mut regularized = Vec::with_capacity(count);
    for t in 0..count {
        let block = y.rows(cfg.start(t), m);
        let mean: DVector<f64> = block.row_sum().transpose() / m as f64;
        let mut centered = block.clone_owned();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut cov = symmetrize(&((centered.transpose() * &centered) / (m - 1) as f64));
        let eig = SymEig::new(&cov);
        let level = cov.trace() / d as f64;
        let flagged = eig.min_value() <= RANK_TOL * level.max(0.0) || level <= 0.0;
        if flagged {
            let scale = if level > 0.0 { level } else { 1.0 };
            for i in 0..d {
                cov[(i, i)] += REGULARIZATION * scale;
            }
        }
        windows.push(GaussianParams::from_parts_unchecked(mean, cov));
        regularized.push(flagged);
    }
    Ok(EmpiricalSequence {
        windows,
        config: cfg,
        source_length: len,
        regularized,
    })
}

/// The `K` pure-state Gaussians `Θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PureStates {
    states: Vec<GaussianParams>,
}

impl PureStates {
    pub fn new(states: Vec<GaussianParams>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyInput("pure states"));
        }
        let d = states[0].dim();
        if let Some(s) = states.iter().find(|s| s.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: s.dim() });
        }
        Ok(PureStates { states })
    }

    pub fn states(&self) -> &[GaussianParams] {
        &self.states
    }

    pub fn k(&self) -> usize {
        self.states.len()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn means(&self) -> Vec<DVector<f64>> {
        self.states.iter().map(|s| s.mean().clone()).collect()
    }

    pub fn covs(&self) -> Vec<DMatrix<f64>> {
        self.states.iter().map(|s| s.cov().clone()).collect()
    }

    /// Reorders states so that new state `i` is old state `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        PureStates {
            states: perm.iter().map(|&i| self.states[i].clone()).collect(),
        }
    }
}

/// Reference Gaussian `(m0, σ0² I)`, width `s` and scale `T` of the Θ prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPriorConfig {
    pub m0: DVector<f64>,
    pub sigma0: f64,
    pub s: f64,
    pub t_scale: f64,
}

impl ThetaPriorConfig {
    pub fn new(m0: DVector<f64>, sigma0: f64, s: f64, t_scale: f64) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(config_err("sigma0", "must be positive"));
        }
        if !(s > 0.0) {
            return Err(config_err("s", "must be positive"));
        }
        if !(t_scale >= 0.0 && t_scale.is_finite()) {
            return Err(config_err("t_scale", "must be nonnegative"));
        }
        Ok(ThetaPriorConfig { m0, sigma0, s, t_scale })
    }
}

/// `log κ = −d · log(2π s² Φ(σ0 / s))`.
pub fn log_kappa(d: usize, s: f64, sigma0: f64) -> f64 {
    let phi = 0.5 * (1.0 + erf(sigma0 / s / std::f64::consts::SQRT_2));
    -(d as f64) * (2.0 * std::f64::consts::PI * s * s * phi).ln()
}

/// How the emission at state `x` is built from the pure states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// Wasserstein barycenter of the pure states.
    Barycenter,
    /// Gaussian mixture with weights `x`.
    GmmLinear,
}

/// Prior on the innovations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnovationPrior {
    /// Fixed stationary Beta plus a learnable moving Beta per state.
    Mixture,
    /// One fixed Beta for every innovation (hyperparameters unused).
    SingleBeta { a: f64, b: f64 },
}

impl InnovationPrior {
    pub const SINGLE_DEFAULT: InnovationPrior = InnovationPrior::SingleBeta { a: 1.1, b: 3.0 };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub interpolation: Interpolation,
    pub innovation_prior: InnovationPrior,
    /// Unrolled barycenter fixed-point iterations.
    pub fixed_point_iters: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            lambda: 100.0,
            interpolation: Interpolation::Barycenter,
            innovation_prior: InnovationPrior::Mixture,
            fixed_point_iters: crate::ot::DEFAULT_FIXED_POINT_ITERS,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(config_err("lambda", "must be nonnegative"));
        }
        if self.fixed_point_iters == 0 {
            return Err(config_err("fixed_point_iters", "must be positive"));
        }
        if let InnovationPrior::SingleBeta { a, b } = self.innovation_prior {
            if !(a > 0.0 && b > 0.0) {
                return Err(config_err("single_beta", "shapes must be positive"));
            }
        }
        Ok(())
    }
}

/// Emission distribution at one time step.
#[derive(Debug, Clone, PartialEq)]
pub enum Emission {
    Gaussian(GaussianParams),
    Mixture { weights: Vec<f64>, components: Vec<GaussianParams> },
}

impl Emission {
    pub fn log_density(&self, y: &[f64]) -> Option<f64> {
        match self {
            Emission::Gaussian(g) => g.log_density(y),
            Emission::Mixture { weights, components } => {
                let mut terms = Vec::with_capacity(weights.len());
                for (w, c) in weights.iter().zip(components) {
                    if *w > 0.0 {
                        terms.push(w.ln() + c.log_density(y)?);
                    }
                }
                let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                Some(m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln())
            }
        }
    }

    /// `n` draws, row-major.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        match self {
            Emission::Gaussian(g) => g.sample(rng, n),
            Emission::Mixture { weights, components } => {
                let mut out = Vec::with_capacity(n * components[0].dim());
                for _ in 0..n {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = components.len() - 1;
                    for (i, w) in weights.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    components[pick].sample_into(rng, 1, &mut out);
                }
                out
            }
        }
    }
}

/// Emission at state `x`.
pub fn emission(x: &SimplexWeights, theta: &PureStates, mode: Interpolation) -> Result<Emission> {
    emission_with_iters(x, theta, mode, crate::ot::DEFAULT_FIXED_POINT_ITERS)
}

pub(crate) fn emission_with_iters(
    x: &SimplexWeights,
    theta: &PureStates,
    mode: Interpolation,
    iters: usize,
) -> Result<Emission> {
    if x.len() != theta.k() {
        return Err(Error::LengthMismatch {
            expected: theta.k(),
            found: x.len(),
        });
    }
    Ok(match mode {
        Interpolation::Barycenter => Emission::Gaussian(barycenter_with_iters(x, theta.states(), iters)?),
        Interpolation::GmmLinear => {
            if let Some(k) = (0..x.len()).find(|&k| x[k] == 1.0) {
                Emission::Gaussian(theta.states()[k].clone())
            } else {
                Emission::Mixture {
                    weights: x.as_slice().to_vec(),
                    components: theta.states().to_vec(),
                }
            }
        }
    })
}

/// Data-fit term between a window estimate and the emission at `x`:
/// `W2²(ρ̂, ρ_B(x))` for barycenters, `Σ_k x_k W2²(ρ̂, θ_k)` for mixtures.
pub fn fit_distance(rho_hat: &GaussianParams, x: &SimplexWeights, theta: &PureStates, mode: Interpolation) -> Result<f64> {
    if rho_hat.dim() != theta.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta.dim(),
            found: rho_hat.dim(),
        });
    }
    if x.len() != theta.k() {
        return Err(Error::LengthMismatch {
            expected: theta.k(),
            found: x.len(),
        });
    }
    match mode {
        Interpolation::Barycenter => {
            let rho = barycenter_with_iters(x, theta.states(), crate::ot::DEFAULT_FIXED_POINT_ITERS)?;
            w2_gaussian(rho_hat, &rho)
        }
        Interpolation::GmmLinear => {
            let mut total = 0.0;
            for (w, s) in x.as_slice().iter().zip(theta.states()) {
                if *w > 0.0 {
                    total += w * w2_gaussian(rho_hat, s)?;
                }
            }
            Ok(total)
        }
    }
}

/// `T · Σ_k [log κ − W2²(θ_k, (m0, σ0² I)) / (2 s²)]`.
pub fn log_prior_theta(theta: &PureStates, cfg: &ThetaPriorConfig) -> Result<f64> {
    let roots = ComponentRoots::new(&theta.covs());
    Ok(log_prior_theta_grad(theta, cfg, &roots)?.0)
}

/// Value plus Euclidean gradients with respect to each mean and covariance.
fn log_prior_theta_grad(
    theta: &PureStates,
    cfg: &ThetaPriorConfig,
    roots: &ComponentRoots,
) -> Result<(f64, Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
    let d = theta.dim();
    if cfg.m0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: cfg.m0.len(),
        });
    }
    let lk = log_kappa(d, cfg.s, cfg.sigma0);
    let scale = cfg.t_scale / (2.0 * cfg.s * cfg.s);
    let s0 = cfg.sigma0;
    let mut total = 0.0;
    let mut gm = Vec::with_capacity(theta.k());
    let mut gs = Vec::with_capacity(theta.k());
    for (k, st) in theta.states().iter().enumerate() {
        let diff = st.mean() - &cfg.m0;
        // 𝓑²(σ0² I, S) = d σ0² + tr S − 2 σ0 tr S^½.
        let tr_root: f64 = roots.roots[k].trace();
        let bures = (d as f64 * s0 * s0 + st.cov().trace() - 2.0 * s0 * tr_root).max(0.0);
        let w2 = diff.norm_squared() + bures;
        total += cfg.t_scale * lk - scale * w2;
        gm.push(&diff * (-2.0 * scale));
        let g = DMatrix::identity(d, d) - roots.eigs[k].inv_sqrt() * s0;
        gs.push(g * -scale);
    }
    if !total.is_finite() {
        return Err(Error::NonFinite {
            term: "pure-state prior",
            index: 0,
        });
    }
    Ok((total, gm, gs))
}

/// All learnable parameters: innovations and initial state, pure states, and
/// innovation-prior hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DwbParams {
    pub seq: InnovationSequence,
    pub theta: PureStates,
    pub hyper: BetaMixtureHyper,
}

/// Which gradient blocks to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradRequest {
    /// Innovations, initial state and hyperparameters.
    Dynamics,
    /// Pure-state means and covariances.
    Theta,
    All,
}

impl GradRequest {
    fn dynamics(self) -> bool {
        matches!(self, GradRequest::Dynamics | GradRequest::All)
    }

    fn theta(self) -> bool {
        matches!(self, GradRequest::Theta | GradRequest::All)
    }
}

/// Objective value and Euclidean gradients (blocks not requested are zero).
#[derive(Debug, Clone)]
pub struct ObjectiveGrad {
    pub value: f64,
    pub gammas: Vec<f64>,
    pub x0: Vec<f64>,
    pub hyper: HyperGrad,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

/// Per-term breakdown of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub innovation_prior: f64,
    pub theta_prior: f64,
    /// `Σ_t fit_t` before multiplying by `λ`.
    pub data: f64,
}

impl ObjectiveTerms {
    pub fn total(&self, lambda: f64) -> f64 {
        -self.innovation_prior - self.theta_prior + lambda * self.data
    }
}

/// Pure-state part of the objective and its gradients.
#[derive(Debug, Clone)]
pub struct ThetaCost {
    pub value: f64,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

struct WindowGrad {
    fit: f64,
    xbar: Vec<f64>,
    mbar: Vec<DVector<f64>>,
    sbar: Vec<DMatrix<f64>>,
    rootbar: Vec<DMatrix<f64>>,
}

/// The objective bound to one data set, with per-window roots cached.
pub struct Objective<'a> {
    data: &'a EmpiricalSequence,
    cfg: ObjectiveConfig,
    prior: &'a ThetaPriorConfig,
    parallelism: Parallelism,
    data_roots: Vec<DMatrix<f64>>,
}

impl<'a> Objective<'a> {
    pub fn new(data: &'a EmpiricalSequence, cfg: ObjectiveConfig, prior: &'a ThetaPriorConfig) -> Result<Self> {
        cfg.validate()?;
        if prior.m0.len() != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: data.dim(),
                found: prior.m0.len(),
            });
        }
        let data_roots = data.windows().iter().map(|w| SymEig::new(w.cov()).sqrt()).collect();
        Ok(Objective {
            data,
            cfg,
            prior,
            parallelism: Parallelism::default(),
            data_roots,
        })
    }

    pub fn with_parallelism(mut self, p: Parallelism) -> Self {
        self.parallelism = p;
        self
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.cfg
    }

    pub fn data(&self) -> &EmpiricalSequence {
        self.data
    }

    fn check(&self, p: &DwbParams) -> Result<()> {
        let k = p.theta.k();
        if p.theta.dim() != self.data.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.data.dim(),
                found: p.theta.dim(),
            });
        }
        if p.seq.k() != k || p.hyper.len() != k {
            return Err(Error::LengthMismatch {
                expected: k,
                found: if p.seq.k() != k { p.seq.k() } else { p.hyper.len() },
            });
        }
        if p.seq.len() != self.data.len() {
            return Err(Error::LengthMismatch {
                expected: self.data.len(),
                found: p.seq.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, p: &DwbParams) -> Result<f64> {
        Ok(self.terms(p)?.total(self.cfg.lambda))
    }

    pub fn terms(&self, p: &DwbParams) -> Result<ObjectiveTerms> {
        self.check(p)?;
        let traj = unroll_flat(p.seq.x0().as_slice(), p.seq.gammas());
        let roots = ComponentRoots::new(&p.theta.covs());
        let innovation_prior = self.innovation_prior(p)?.0;
        let theta_prior = log_prior_theta_grad(&p.theta, self.prior, &roots)?.0;
        let fits = self.data_fits(&traj, &p.theta, &roots)?;
        Ok(ObjectiveTerms {
            innovation_prior,
            theta_prior,
            data: fits.iter().sum(),
        })
    }

    /// Per-window fit terms for a given trajectory.
    pub fn window_fits(&self, p: &DwbParams) -> Result<Vec<f64>> {
        self.check(p)?;
        let traj = unroll_flat(p.seq.x0().as_slice(), p.seq.gammas());
        self.data_fits(&traj, &p.theta, &ComponentRoots::new(&p.theta.covs()))
    }

    fn innovation_prior(&self, p: &DwbParams) -> Result<(f64, Vec<f64>, HyperGrad)> {
        match self.cfg.innovation_prior {
            InnovationPrior::Mixture => log_prior_innovations_grad(p.seq.gammas(), &p.hyper),
            InnovationPrior::SingleBeta { a, b } => {
                let (v, g) = log_prior_innovations_single_grad(p.seq.gammas(), a, b)?;
                Ok((v, g, HyperGrad::zeros(p.hyper.len())))
            }
        }
    }

    fn data_fits(&self, traj: &[f64], theta: &PureStates, roots: &ComponentRoots) -> Result<Vec<f64>> {
        let k = theta.k();
        let means = theta.means();
        let covs = theta.covs();
        self.parallelism.try_map(self.data.len(), |t| {
            let x = &traj[t * k..(t + 1) * k];
            let fit = self.window(t, x, &means, &covs, roots, false)?.fit;
            Ok(fit)
        })
    }

    fn window(
        &self,
        t: usize,
        x: &[f64],
        means: &[DVector<f64>],
        covs: &[DMatrix<f64>],
        roots: &ComponentRoots,
        grad: bool,
    ) -> Result<WindowGrad> {
        let k = x.len();
        let d = means[0].len();
        let hat = &self.data.windows()[t];
        let root_hat = &self.data_roots[t];
        let mut out = WindowGrad {
            fit: 0.0,
            xbar: vec![0.0; k],
            mbar: Vec::new(),
            sbar: Vec::new(),
            rootbar: Vec::new(),
        };
        match self.cfg.interpolation {
            Interpolation::Barycenter => {
                let mut mb = DVector::zeros(d);
                for (w, m) in x.iter().zip(means) {
                    mb.axpy(*w, m, 1.0);
                }
                let diff = &mb - hat.mean();
                let tape = CovTape::forward(x, covs, roots, self.cfg.fixed_point_iters);
                let (cross, gc) = bures_grad_second(root_hat, &tape.cov);
                out.fit = diff.norm_squared() + (hat.cov().trace() + tape.cov.trace() - 2.0 * cross).max(0.0);
                if grad {
                    let back = tape.backward(x, covs, roots, &gc);
                    for j in 0..k {
                        out.xbar[j] = 2.0 * diff.dot(&means[j]) + back.weights[j];
                        out.mbar.push(&diff * (2.0 * x[j]));
                    }
                    out.sbar = back.covs;
                    out.rootbar = back.roots;
                }
            }
            Interpolation::GmmLinear => {
                for j in 0..k {
                    let diff = &means[j] - hat.mean();
                    let (cross, gs) = bures_grad_second(root_hat, &covs[j]);
                    let w2 = diff.norm_squared() + (hat.cov().trace() + covs[j].trace() - 2.0 * cross).max(0.0);
                    out.fit += x[j] * w2;
                    if grad {
                        out.xbar[j] = w2;
                        out.mbar.push(diff * (2.0 * x[j]));
                        out.sbar.push(gs * x[j]);
                    }
                }
            }
        }
        if !out.fit.is_finite() {
            return Err(Error::NonFinite {
                term: "data term",
                index: t,
            });
        }
        Ok(out)
    }

    /// Value and the requested gradient blocks.
    pub fn gradient(&self, p: &DwbParams, req: GradRequest) -> Result<ObjectiveGrad> {
        self.check(p)?;
        let k = p.theta.k();
        let d = p.theta.dim();
        let lambda = self.cfg.lambda;
        let x0 = p.seq.x0().as_slice();
        let traj = unroll_flat(x0, p.seq.gammas());
        let covs = p.theta.covs();
        let means = p.theta.means();
        let roots = ComponentRoots::new(&covs);

        let (lp_gamma, dgamma_prior, dhyper) = self.innovation_prior(p)?;
        let (lp_theta, dm_prior, ds_prior) = log_prior_theta_grad(&p.theta, self.prior, &roots)?;

        let per_window = self.parallelism.try_map(self.data.len(), |t| {
            self.window(t, &traj[t * k..(t + 1) * k], &means, &covs, &roots, true)
        })?;

        let mut data = 0.0;
        let mut xbar = vec![0.0; traj.len()];
        let mut mbar = vec![DVector::zeros(d); k];
        let mut sbar = vec![DMatrix::zeros(d, d); k];
        let mut rootbar = vec![DMatrix::zeros(d, d); k];
        for (t, w) in per_window.iter().enumerate() {
            data += w.fit;
            for j in 0..k {
                xbar[t * k + j] = lambda * w.xbar[j];
            }
            if req.theta() {
                for j in 0..k {
                    mbar[j] += &w.mbar[j];
                    sbar[j] += &w.sbar[j];
                    if let Some(r) = w.rootbar.get(j) {
                        rootbar[j] += r;
                    }
                }
            }
        }
        let value = -lp_gamma - lp_theta + lambda * data;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                term: "objective",
                index: 0,
            });
        }

        let mut out = ObjectiveGrad {
            value,
            gammas: vec![0.0; p.seq.gammas().len()],
            x0: vec![0.0; k],
            hyper: HyperGrad::zeros(k),
            means: vec![DVector::zeros(d); k],
            covs: vec![DMatrix::zeros(d, d); k],
        };
        if req.dynamics() {
            let (gbar, x0bar) = unroll_backward(x0, p.seq.gammas(), &traj, &xbar);
            out.gammas = gbar.iter().zip(&dgamma_prior).map(|(g, pr)| g - pr).collect();
            out.x0 = x0bar;
            out.hyper = HyperGrad {
                w: dhyper.w.iter().map(|v| -v).collect(),
                a1: dhyper.a1.iter().map(|v| -v).collect(),
                b1: dhyper.b1.iter().map(|v| -v).collect(),
            };
        }
        if req.theta() {
            for j in 0..k {
                out.means[j] = &mbar[j] * lambda - &dm_prior[j];
                let mut s = &sbar[j] * lambda - &ds_prior[j];
                if self.cfg.interpolation == Interpolation::Barycenter {
                    s += roots.eigs[j].pullback_sqrt(&rootbar[j]) * lambda;
                }
                out.covs[j] = symmetrize(&s);
            }
        }
        Ok(out)
    }

    /// `−log p(Θ) + λ Σ_t fit_t` along an explicit row-major `T × K`
    /// trajectory, with Euclidean gradients when `grad` is set.
    pub fn theta_cost(&self, traj: &[f64], theta: &PureStates, grad: bool) -> Result<ThetaCost> {
        let k = theta.k();
        let d = theta.dim();
        if d != self.data.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.data.dim(),
                found: d,
            });
        }
        if traj.len() != self.data.len() * k {
            return Err(Error::LengthMismatch {
                expected: self.data.len() * k,
                found: traj.len(),
            });
        }
        let lambda = self.cfg.lambda;
        let means = theta.means();
        let covs = theta.covs();
        let roots = ComponentRoots::new(&covs);
        let (lp_theta, dm_prior, ds_prior) = log_prior_theta_grad(theta, self.prior, &roots)?;
        let per_window = self.parallelism.try_map(self.data.len(), |t| {
            self.window(t, &traj[t * k..(t + 1) * k], &means, &covs, &roots, grad)
        })?;
        let data: f64 = per_window.iter().map(|w| w.fit).sum();
        let value = -lp_theta + lambda * data;
        let mut out = ThetaCost {
            value,
            means: Vec::new(),
            covs: Vec::new(),
        };
        if grad {
            for j in 0..k {
                let mut mbar = DVector::zeros(d);
                let mut sbar = DMatrix::zeros(d, d);
                let mut rootbar = DMatrix::zeros(d, d);
                for w in &per_window {
                    mbar += &w.mbar[j];
                    sbar += &w.sbar[j];
                    if let Some(r) = w.rootbar.get(j) {
                        rootbar += r;
                    }
                }
                out.means.push(mbar * lambda - &dm_prior[j]);
                let mut g = sbar * lambda - &ds_prior[j];
                if self.cfg.interpolation == Interpolation::Barycenter {
                    g += roots.eigs[j].pullback_sqrt(&rootbar) * lambda;
                }
                out.covs.push(symmetrize(&g));
            }
        }
        Ok(out)
    }

    /// Emissions along the trajectory implied by `p`.
    pub fn emissions(&self, p: &DwbParams) -> Result<Vec<Emission>> {
        self.check(p)?;
        let k = p.theta.k();
        let traj = unroll_flat(p.seq.x0().as_slice(), p.seq.gammas());
        self.parallelism.try_map(self.data.len(), |t| {
            let x = SimplexWeights::project(traj[t * k..(t + 1) * k].to_vec());
            emission_with_iters(&x, &p.theta, self.cfg.interpolation, self.cfg.fixed_point_iters)
        })
    }
}

/// `F(Γ, Θ, H)` for one data set.
pub fn objective(
    seq: &InnovationSequence,
    theta: &PureStates,
    hyper: &BetaMixtureHyper,
    data: &EmpiricalSequence,
    cfg: &ObjectiveConfig,
    prior: &ThetaPriorConfig,
) -> Result<f64> {
    let obj = Objective::new(data, *cfg, prior)?;
    obj.value(&DwbParams {
        seq: seq.clone(),
        theta: theta.clone(),
        hyper: hyper.clone(),
    })
}
