//! Average Wasserstein error, per-sample negative log-likelihood, and
//! ground-truth scoring up to a relabeling of the states.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::gaussian::{GaussianParams, SimplexWeights};
use crate::model::{Emission, EmpiricalSequence, PureStates, WindowConfig};
use crate::ot::{ot_discrete, w2_gaussian, PointCloud};

/// Sample size and seed for Monte-Carlo distances to mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonteCarlo {
    pub samples: usize,
    pub seed: u64,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        MonteCarlo { samples: 5000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub e_w: f64,
    pub e_nll: f64,
    pub per_window_w: Vec<f64>,
    pub per_window_nll: Vec<f64>,
    /// Windows whose emission needed regularization to evaluate densities.
    pub regularized_nll: Vec<usize>,
    pub seed: u64,
}

/// `W2²(ρ̂, e)`: closed form for Gaussians, exact discrete OT between
/// `mc.samples`-point clouds for mixtures.
pub fn window_distance(rho_hat: &GaussianParams, e: &Emission, mc: &MonteCarlo, t: usize) -> Result<f64> {
    match e {
        Emission::Gaussian(g) => w2_gaussian(rho_hat, g),
        Emission::Mixture { .. } => {
            let d = rho_hat.dim();
            let mut rng = ChaCha8Rng::seed_from_u64(mc.seed.wrapping_add(t as u64));
            let a = PointCloud::uniform(d, rho_hat.sample(&mut rng, mc.samples))?;
            let b = PointCloud::uniform(d, e.sample(&mut rng, mc.samples))?;
            Ok(ot_discrete(&a, &b)?.cost)
        }
    }
}

/// Per-window distances between data windows and emissions; `e_W` is their mean.
pub fn eval_e_w_windows(
    data: &EmpiricalSequence,
    emissions: &[Emission],
    mc: &MonteCarlo,
    par: Parallelism,
) -> Result<Vec<f64>> {
    if emissions.len() != data.len() {
        return Err(Error::LengthMismatch {
            expected: data.len(),
            found: emissions.len(),
        });
    }
    par.try_map(data.len(), |t| window_distance(&data.windows()[t], &emissions[t], mc, t))
}

pub fn eval_e_w(data: &EmpiricalSequence, emissions: &[Emission], mc: &MonteCarlo) -> Result<f64> {
    let w = eval_e_w_windows(data, emissions, mc, Parallelism::default())?;
    Ok(w.iter().sum::<f64>() / w.len() as f64)
}

fn regularized(g: &GaussianParams) -> GaussianParams {
    let d = g.dim();
    let level = (g.cov().trace() / d as f64).max(1.0);
    GaussianParams::from_parts_unchecked(g.mean().clone(), g.cov() + DMatrix::identity(d, d) * (1e-8 * level))
}

/// Mean negative log-density of one window's samples; flags regularization.
fn window_nll(series: &DMatrix<f64>, start: usize, len: usize, e: &Emission) -> Result<(f64, bool)> {
    let d = series.ncols();
    let mut fixed = false;
    let prepare = |g: &GaussianParams, fixed: &mut bool| match g.density() {
        Some(dens) => dens,
        None => {
            *fixed = true;
            regularized(g).density().expect("regularized covariance is positive definite")
        }
    };
    let comps: Vec<(f64, _)> = match e {
        Emission::Gaussian(g) => vec![(0.0, prepare(g, &mut fixed))],
        Emission::Mixture { weights, components } => weights
            .iter()
            .zip(components)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, g)| (w.ln(), prepare(g, &mut fixed)))
            .collect(),
    };
    let mut row = vec![0.0; d];
    let mut total = 0.0;
    for i in start..start + len {
        for (c, v) in row.iter_mut().enumerate() {
            *v = series[(i, c)];
        }
        let lp = if comps.len() == 1 {
            comps[0].0 + comps[0].1.eval(&row)
        } else {
            let vals: Vec<f64> = comps.iter().map(|(lw, dens)| lw + dens.eval(&row)).collect();
            let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
        };
        total -= lp;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite {
            term: "log-likelihood",
            index: start,
        });
    }
    Ok((total / len as f64, fixed))
}

/// Per-window mean negative log-likelihood of the raw samples under each
/// window's emission, plus the windows that needed regularization.
pub fn eval_e_nll_windows(
    series: &DMatrix<f64>,
    cfg: WindowConfig,
    emissions: &[Emission],
    par: Parallelism,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let count = cfg.count(series.nrows());
    if emissions.len() != count {
        return Err(Error::LengthMismatch {
            expected: count,
            found: emissions.len(),
        });
    }
    let per = par.try_map(count, |t| window_nll(series, cfg.start(t), cfg.length(), &emissions[t]))?;
    let flagged = per.iter().enumerate().filter(|(_, p)| p.1).map(|(t, _)| t).collect();
    Ok((per.into_iter().map(|p| p.0).collect(), flagged))
}

/// `−(1 / (T (2n+1))) Σ_t Σ_i log ρ_t(y_i)` over the samples of each window.
pub fn eval_e_nll(series: &DMatrix<f64>, cfg: WindowConfig, emissions: &[Emission]) -> Result<f64> {
    let (per, _) = eval_e_nll_windows(series, cfg, emissions, Parallelism::default())?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Both metrics in one report.
pub fn evaluate(
    series: &DMatrix<f64>,
    data: &EmpiricalSequence,
    emissions: &[Emission],
    mc: &MonteCarlo,
    par: Parallelism,
) -> Result<MetricReport> {
    let per_w = eval_e_w_windows(data, emissions, mc, par)?;
    let (per_nll, flagged) = eval_e_nll_windows(series, data.config(), emissions, par)?;
    Ok(MetricReport {
        e_w: per_w.iter().sum::<f64>() / per_w.len() as f64,
        e_nll: per_nll.iter().sum::<f64>() / per_nll.len() as f64,
        per_window_w: per_w,
        per_window_nll: per_nll,
        regularized_nll: flagged,
        seed: mc.seed,
    })
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..k).collect();
    loop {
        out.push(p.clone());
        // Next lexicographic permutation.
        let Some(i) = (1..k).rev().find(|&i| p[i - 1] < p[i]) else {
            break;
        };
        let j = (i..k).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
    }
    out
}

/// Comparison of fitted against true states under the best relabeling.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScore {
    /// `perm[j]` is the fitted state matched to true state `j`.
    pub perm: Vec<usize>,
    /// Mean absolute error of the relabeled trajectory over all entries.
    pub state_mae: f64,
    /// `W2²` from each true state to its matched fitted state.
    pub theta_w2: Vec<f64>,
}

/// Picks the relabeling minimizing the trajectory error.
pub fn score_against_truth(
    fitted_states: &[SimplexWeights],
    fitted_theta: &PureStates,
    true_states: &[SimplexWeights],
    true_theta: &PureStates,
) -> Result<GroundTruthScore> {
    let k = true_theta.k();
    if fitted_theta.k() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            found: fitted_theta.k(),
        });
    }
    if fitted_states.len() != true_states.len() {
        return Err(Error::LengthMismatch {
            expected: true_states.len(),
            found: fitted_states.len(),
        });
    }
    let n = (true_states.len() * k) as f64;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(k) {
        let mae: f64 = fitted_states
            .iter()
            .zip(true_states)
            .map(|(f, t)| (0..k).map(|j| (f[perm[j]] - t[j]).abs()).sum::<f64>())
            .sum::<f64>()
            / n;
        if best.as_ref().is_none_or(|b| mae < b.0) {
            best = Some((mae, perm));
        }
    }
    let (state_mae, perm) = best.unwrap();
    let theta_w2 = (0..k)
        .map(|j| w2_gaussian(&true_theta.states()[j], &fitted_theta.states()[perm[j]]))
        .collect::<Result<_>>()?;
    Ok(GroundTruthScore {
        perm,
        state_mae,
        theta_w2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::window_series;
    use nalgebra::DVector;
    use rand::Rng;

    #[test]
    fn identical_emissions_have_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
        let y = DMatrix::from_row_slice(150, 2, &rows);
        let data = window_series(&y, WindowConfig::new(5, 10).unwrap()).unwrap();
        let em: Vec<_> = data.windows().iter().cloned().map(Emission::Gaussian).collect();
        assert!(eval_e_w(&data, &em, &MonteCarlo::default()).unwrap() < 1e-12);
        let one = EmpiricalSequence::from_windows(vec![data.windows()[0].clone()], data.config(), 11).unwrap();
        let g = GaussianParams::standard(2);
        assert_eq!(
            eval_e_w(&one, &[Emission::Gaussian(g.clone())], &MonteCarlo::default()).unwrap(),
            w2_gaussian(&one.windows()[0], &g).unwrap()
        );
    }

    #[test]
    fn standard_normal_nll_is_entropy() {
        let d = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = GaussianParams::standard(d);
        let rows = g.sample(&mut rng, 40_000);
        let y = DMatrix::from_row_slice(40_000, d, &rows);
        let cfg = WindowConfig::new(99, 199).unwrap();
        let em = vec![Emission::Gaussian(g); cfg.count(40_000)];
        let nll = eval_e_nll(&y, cfg, &em).unwrap();
        let entropy = 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() + 0.5 * d as f64;
        assert!((nll - entropy).abs() < 0.02, "{nll} vs {entropy}");
    }

    #[test]
    fn samples_at_the_mode() {
        let g = GaussianParams::new(DVector::from_vec(vec![1.0, -2.0]), DMatrix::identity(2, 2) * 2.0).unwrap();
        let y = DMatrix::from_fn(5, 2, |_, c| if c == 0 { 1.0 } else { -2.0 });
        let nll = eval_e_nll(&y, WindowConfig::new(2, 1).unwrap(), &[Emission::Gaussian(g.clone())]).unwrap();
        assert!((nll + g.log_density(&[1.0, -2.0]).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn nll_is_additive_over_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<f64> = (0..400).map(|_| rng.random::<f64>()).collect();
        let y = DMatrix::from_row_slice(200, 2, &rows);
        let cfg = WindowConfig::new(4, 9).unwrap();
        let data = window_series(&y, cfg).unwrap();
        let em: Vec<_> = data.windows().iter().cloned().map(Emission::Gaussian).collect();
        let (per, _) = eval_e_nll_windows(&y, cfg, &em, Parallelism::Sequential).unwrap();
        let mut direct = 0.0;
        for t in 0..data.len() {
            for i in 0..cfg.length() {
                let row: Vec<f64> = y.row(cfg.start(t) + i).iter().cloned().collect();
                direct -= data.windows()[t].log_density(&row).unwrap();
            }
        }
        let total: f64 = per.iter().map(|p| p * cfg.length() as f64).sum();
        assert!((total - direct).abs() < 1e-9 * direct.abs());
    }

    #[test]
    fn permutations_are_complete() {
        let p = permutations(3);
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], vec![0, 1, 2]);
        assert_eq!(p[5], vec![2, 1, 0]);
    }

    #[test]
    fn perfect_fit_scores_zero() {
        let theta = PureStates::new(vec![
            GaussianParams::standard(1),
            GaussianParams::isotropic(DVector::from_vec(vec![3.0]), 2.0).unwrap(),
        ])
        .unwrap();
        let truth = vec![SimplexWeights::vertex(2, 0), SimplexWeights::new(vec![0.3, 0.7]).unwrap()];
        let swapped = theta.permuted(&[1, 0]);
        let fitted: Vec<_> = truth
            .iter()
            .map(|x| SimplexWeights::new(vec![x[1], x[0]]).unwrap())
            .collect();
        let s = score_against_truth(&fitted, &swapped, &truth, &theta).unwrap();
        assert_eq!(s.perm, vec![1, 0]);
        assert_eq!(s.state_mae, 0.0);
        assert!(s.theta_w2.iter().all(|w| *w == 0.0));
    }
}
