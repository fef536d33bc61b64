//! Simplex random walk driven by per-vertex innovations and its Beta-mixture
//! prior.
//!
//! `x_t = (1 − mean(γ_t))·x_{t−1} + γ_t / K`: each coordinate `k` takes a step of
//! length `γ_t[k]` toward vertex `e_k`, and the `K` moves are averaged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{config_err, Error, Result};
use crate::gaussian::SimplexWeights;

/// Innovations are clamped to `[GAMMA_EPS, 1 − GAMMA_EPS]`.
pub const GAMMA_EPS: f64 = 1e-6;
const RENORM_TOL: f64 = 1e-12;

pub fn clamp_gamma(g: f64) -> f64 {
    g.clamp(GAMMA_EPS, 1.0 - GAMMA_EPS)
}

/// Initial state plus a `T × K` row-major matrix of innovations.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationSequence {
    x0: SimplexWeights,
    gammas: Vec<f64>,
    k: usize,
}

impl InnovationSequence {
    /// Entries must lie in `[0, 1]`; they are clamped into `[ε, 1 − ε]`.
    pub fn new(x0: SimplexWeights, gammas: Vec<f64>) -> Result<Self> {
        let k = x0.len();
        if gammas.len() % k != 0 {
            return Err(Error::LengthMismatch {
                expected: gammas.len().div_ceil(k) * k,
                found: gammas.len(),
            });
        }
        if let Some(i) = gammas.iter().position(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::NumericalDomain(format!(
                "innovation {} at index {i} outside [0, 1]",
                gammas[i]
            )));
        }
        let gammas = gammas.into_iter().map(clamp_gamma).collect();
        Ok(InnovationSequence { x0, gammas, k })
    }

    /// Constant innovations `value` for `t = 1..=T` from `x0`.
    pub fn constant(x0: SimplexWeights, t: usize, value: f64) -> Result<Self> {
        let k = x0.len();
        Self::new(x0, vec![value; t * k])
    }

    pub(crate) fn from_parts_unchecked(x0: Vec<f64>, gammas: Vec<f64>) -> Self {
        let k = x0.len();
        InnovationSequence {
            x0: SimplexWeights::from_vec_unchecked(x0),
            gammas,
            k,
        }
    }

    pub fn x0(&self) -> &SimplexWeights {
        &self.x0
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn gamma(&self, t: usize) -> &[f64] {
        &self.gammas[t * self.k..(t + 1) * self.k]
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.gammas.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }
}

/// Learnable mixture weights and slow-component shapes; the stationary
/// component `Beta(A0, B0)` is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaMixtureHyper {
    pub w: Vec<f64>,
    pub a1: Vec<f64>,
    pub b1: Vec<f64>,
}

impl BetaMixtureHyper {
    pub const A0: f64 = 1.1;
    pub const B0: f64 = 20.0;
    pub const W_MIN: f64 = 0.01;
    pub const W_MAX: f64 = 0.99;
    pub const A1_MIN: f64 = 1.1;
    pub const B1_MIN: f64 = 1.0;
    /// Lower bound on the mean `a1 / (a1 + b1)` of the moving component.
    pub const MIN_MEAN: f64 = 0.15;

    pub fn new(w: Vec<f64>, a1: Vec<f64>, b1: Vec<f64>) -> Result<Self> {
        let k = w.len();
        if k == 0 {
            return Err(Error::EmptyInput("mixture hyperparameters"));
        }
        for len in [a1.len(), b1.len()] {
            if len != k {
                return Err(Error::LengthMismatch { expected: k, found: len });
            }
        }
        let h = BetaMixtureHyper { w, a1, b1 };
        for i in 0..k {
            if !(Self::W_MIN..=Self::W_MAX).contains(&h.w[i]) {
                return Err(config_err("w", &format!("{} outside [0.01, 0.99]", h.w[i])));
            }
            if !(h.a1[i] >= Self::A1_MIN) {
                return Err(config_err("a1", &format!("{} below 1.1", h.a1[i])));
            }
            if !(h.b1[i] >= Self::B1_MIN) {
                return Err(config_err("b1", &format!("{} below 1", h.b1[i])));
            }
            if h.b1[i] > Self::b1_max(h.a1[i]) {
                return Err(config_err("b1", "moving component mean a1/(a1+b1) below 0.15"));
            }
        }
        Ok(h)
    }

    /// Initial values `w = 0.5`, `(a1, b1) = (10, 20)`.
    pub fn initial(k: usize) -> Self {
        BetaMixtureHyper {
            w: vec![0.5; k],
            a1: vec![10.0; k],
            b1: vec![20.0; k],
        }
    }

    fn b1_max(a1: f64) -> f64 {
        a1 * (1.0 - Self::MIN_MEAN) / Self::MIN_MEAN
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Projects every entry into its box (the `b1` box depends on `a1`).
    pub fn clamp(&mut self) {
        for i in 0..self.w.len() {
            self.w[i] = self.w[i].clamp(Self::W_MIN, Self::W_MAX);
            self.a1[i] = self.a1[i].max(Self::A1_MIN);
            self.b1[i] = self.b1[i].clamp(Self::B1_MIN, Self::b1_max(self.a1[i]));
        }
    }

    pub fn satisfies_constraints(&self) -> bool {
        (0..self.w.len()).all(|i| {
            (Self::W_MIN..=Self::W_MAX).contains(&self.w[i])
                && self.a1[i] >= Self::A1_MIN
                && self.b1[i] >= Self::B1_MIN
                && self.b1[i] <= Self::b1_max(self.a1[i]) * (1.0 + 1e-12)
        })
    }
}

/// Gradient of a log prior with respect to the hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrad {
    pub w: Vec<f64>,
    pub a1: Vec<f64>,
    pub b1: Vec<f64>,
}

impl HyperGrad {
    pub fn zeros(k: usize) -> Self {
        HyperGrad {
            w: vec![0.0; k],
            a1: vec![0.0; k],
            b1: vec![0.0; k],
        }
    }
}

/// One step of the walk, renormalized if rounding drift exceeds `1e-12`.
pub fn state_update(x_prev: &SimplexWeights, gamma: &[f64]) -> Result<SimplexWeights> {
    if gamma.len() != x_prev.len() {
        return Err(Error::LengthMismatch {
            expected: x_prev.len(),
            found: gamma.len(),
        });
    }
    let mut out = vec![0.0; gamma.len()];
    step_into(x_prev.as_slice(), gamma, &mut out);
    Ok(SimplexWeights::from_vec_unchecked(out))
}

fn step_into(prev: &[f64], gamma: &[f64], out: &mut [f64]) {
    let k = gamma.len() as f64;
    let keep = 1.0 - gamma.iter().sum::<f64>() / k;
    for i in 0..out.len() {
        out[i] = keep * prev[i] + gamma[i] / k;
    }
    let sum: f64 = out.iter().sum();
    if (sum - 1.0).abs() > RENORM_TOL {
        out.iter_mut().for_each(|v| *v /= sum);
    }
}

/// States `x_1 … x_T`.
pub fn unroll(seq: &InnovationSequence) -> Vec<SimplexWeights> {
    unroll_flat(seq.x0.as_slice(), &seq.gammas)
        .chunks(seq.k)
        .map(|c| SimplexWeights::from_vec_unchecked(c.to_vec()))
        .collect()
}

/// Row-major `T × K` trajectory.
pub(crate) fn unroll_flat(x0: &[f64], gammas: &[f64]) -> Vec<f64> {
    let k = x0.len();
    let t = gammas.len() / k;
    let mut traj = vec![0.0; t * k];
    let mut prev = x0.to_vec();
    for s in 0..t {
        let out = &mut traj[s * k..(s + 1) * k];
        step_into(&prev, &gammas[s * k..(s + 1) * k], out);
        prev.copy_from_slice(out);
    }
    traj
}

/// Reverse pass of [`unroll_flat`]: given `∂L/∂x_t` for every step, returns
/// `(∂L/∂γ, ∂L/∂x_0)`. The renormalization guard is treated as the identity.
pub(crate) fn unroll_backward(x0: &[f64], gammas: &[f64], traj: &[f64], xbar: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = x0.len();
    let t = gammas.len() / k;
    let kf = k as f64;
    let mut gbar = vec![0.0; t * k];
    let mut acc = vec![0.0; k];
    for s in (0..t).rev() {
        for i in 0..k {
            acc[i] += xbar[s * k + i];
        }
        let prev = if s == 0 { x0 } else { &traj[(s - 1) * k..s * k] };
        let gamma = &gammas[s * k..(s + 1) * k];
        let dot: f64 = acc.iter().zip(prev).map(|(a, b)| a * b).sum();
        for i in 0..k {
            gbar[s * k + i] = (acc[i] - dot) / kf;
        }
        let keep = 1.0 - gamma.iter().sum::<f64>() / kf;
        acc.iter_mut().for_each(|a| *a *= keep);
    }
    (gbar, acc)
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Log density of `Beta(a, b)` at `x ∈ (0, 1)`.
pub fn ln_beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta(a, b)
}

fn check_gammas(gammas: &[f64]) -> Result<()> {
    match gammas.iter().position(|g| !(*g > 0.0 && *g < 1.0)) {
        Some(i) => Err(Error::NumericalDomain(format!("innovation {} at index {i} outside (0, 1)", gammas[i]))),
        None => Ok(()),
    }
}

/// `Σ_t Σ_k log(w_k Beta(γ; A0, B0) + (1 − w_k) Beta(γ; a1_k, b1_k))`.
pub fn log_prior_innovations(gammas: &[f64], h: &BetaMixtureHyper) -> Result<f64> {
    Ok(log_prior_innovations_grad(gammas, h)?.0)
}

/// Value plus gradients with respect to the innovations and hyperparameters.
pub fn log_prior_innovations_grad(gammas: &[f64], h: &BetaMixtureHyper) -> Result<(f64, Vec<f64>, HyperGrad)> {
    let k = h.len();
    if k == 0 || gammas.len() % k != 0 {
        return Err(Error::LengthMismatch {
            expected: k,
            found: gammas.len(),
        });
    }
    check_gammas(gammas)?;
    let (a0, b0) = (BetaMixtureHyper::A0, BetaMixtureHyper::B0);
    let lb0 = ln_beta(a0, b0);
    let lb1: Vec<f64> = (0..k).map(|i| ln_beta(h.a1[i], h.b1[i])).collect();
    let dg_a: Vec<f64> = (0..k).map(|i| digamma(h.a1[i]) - digamma(h.a1[i] + h.b1[i])).collect();
    let dg_b: Vec<f64> = (0..k).map(|i| digamma(h.b1[i]) - digamma(h.a1[i] + h.b1[i])).collect();
    let mut total = 0.0;
    let mut dgam = vec![0.0; gammas.len()];
    let mut hg = HyperGrad::zeros(k);
    for (idx, &g) in gammas.iter().enumerate() {
        let i = idx % k;
        let (lg, l1g) = (g.ln(), (1.0 - g).ln());
        let l0 = h.w[i].ln() + (a0 - 1.0) * lg + (b0 - 1.0) * l1g - lb0;
        let l1 = (1.0 - h.w[i]).ln() + (h.a1[i] - 1.0) * lg + (h.b1[i] - 1.0) * l1g - lb1[i];
        let m = l0.max(l1);
        let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
        if !lse.is_finite() {
            return Err(Error::NonFinite {
                term: "innovation prior",
                index: idx / k,
            });
        }
        total += lse;
        let r = (l0 - lse).exp();
        let s = 1.0 - r;
        dgam[idx] = r * ((a0 - 1.0) / g - (b0 - 1.0) / (1.0 - g))
            + s * ((h.a1[i] - 1.0) / g - (h.b1[i] - 1.0) / (1.0 - g));
        hg.w[i] += r / h.w[i] - s / (1.0 - h.w[i]);
        hg.a1[i] += s * (lg - dg_a[i]);
        hg.b1[i] += s * (l1g - dg_b[i]);
    }
    Ok((total, dgam, hg))
}

/// Single-component variant `Σ log Beta(γ; a, b)`.
pub fn log_prior_innovations_single(gammas: &[f64], a: f64, b: f64) -> Result<f64> {
    Ok(log_prior_innovations_single_grad(gammas, a, b)?.0)
}

pub fn log_prior_innovations_single_grad(gammas: &[f64], a: f64, b: f64) -> Result<(f64, Vec<f64>)> {
    check_gammas(gammas)?;
    let lb = ln_beta(a, b);
    let mut total = 0.0;
    let mut dgam = Vec::with_capacity(gammas.len());
    for (idx, &g) in gammas.iter().enumerate() {
        let v = (a - 1.0) * g.ln() + (b - 1.0) * (1.0 - g).ln() - lb;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: "innovation prior",
                index: idx,
            });
        }
        total += v;
        dgam.push((a - 1.0) / g - (b - 1.0) / (1.0 - g));
    }
    Ok((total, dgam))
}

/// Draws innovations from the mixture prior and unrolls the walk.
pub fn simulate(
    t: usize,
    h: &BetaMixtureHyper,
    x0: &SimplexWeights,
    seed: u64,
) -> Result<(InnovationSequence, Vec<SimplexWeights>)> {
    let k = h.len();
    if t == 0 {
        return Err(Error::EmptyInput("simulation length"));
    }
    if x0.len() != k {
        return Err(Error::LengthMismatch { expected: k, found: x0.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stationary = Beta::new(BetaMixtureHyper::A0, BetaMixtureHyper::B0)
        .map_err(|e| Error::NumericalDomain(e.to_string()))?;
    let moving: Vec<Beta<f64>> = (0..k)
        .map(|i| Beta::new(h.a1[i], h.b1[i]).map_err(|e| Error::NumericalDomain(e.to_string())))
        .collect::<Result<_>>()?;
    let mut gammas = Vec::with_capacity(t * k);
    for _ in 0..t {
        for (i, mv) in moving.iter().enumerate() {
            let g = if rng.random::<f64>() < h.w[i] {
                stationary.sample(&mut rng)
            } else {
                mv.sample(&mut rng)
            };
            gammas.push(clamp_gamma(g));
        }
    }
    let seq = InnovationSequence::new(x0.clone(), gammas)?;
    let traj = unroll(&seq);
    Ok((seq, traj))
}
