//! k-means++, full-covariance EM, and the starting point of a fit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Error, Result};
use crate::gaussian::{GaussianParams, SimplexWeights};
use crate::linalg::{symmetrize, SymEig};
use crate::model::{DwbParams, EmpiricalSequence, PureStates, ThetaPriorConfig};
use crate::simplex::{BetaMixtureHyper, InnovationSequence, GAMMA_EPS};

/// Rows of `points` (n × dim, row-major) clustered into `k` groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp_centers(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centers = vec![row(rng.random_range(0..n)).to_vec()];
    let mut dist: Vec<f64> = (0..n).map(|i| sq(row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(row(pick).to_vec());
        for i in 0..n {
            dist[i] = dist[i].min(sq(row(i), centers.last().unwrap()));
        }
    }
    centers
}

/// Seeded k-means++ followed by Lloyd iterations; best of `restarts` by inertia.
pub fn kmeans(points: &[f64], dim: usize, k: usize, restarts: usize, seed: u64) -> Result<Clustering> {
    if dim == 0 || points.is_empty() {
        return Err(Error::EmptyInput("k-means points"));
    }
    if k == 0 {
        return Err(config_err("k", "must be positive"));
    }
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let mut centers = kmeans_pp_centers(points, dim, k, &mut rng);
        let mut labels = vec![usize::MAX; n];
        for _ in 0..300 {
            let mut changed = false;
            for i in 0..n {
                let (mut bj, mut bd) = (0, f64::INFINITY);
                for (j, c) in centers.iter().enumerate() {
                    let d = sq(row(i), c);
                    if d < bd {
                        bd = d;
                        bj = j;
                    }
                }
                if labels[i] != bj {
                    labels[i] = bj;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for i in 0..n {
                counts[labels[i]] += 1;
                for (s, v) in sums[labels[i]].iter_mut().zip(row(i)) {
                    *s += v;
                }
            }
            for j in 0..k {
                if counts[j] > 0 {
                    centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
                }
            }
        }
        let inertia = (0..n).map(|i| sq(row(i), &centers[labels[i]])).sum();
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(Clustering { labels, centers, inertia });
        }
    }
    Ok(best.unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stops when the mean per-sample log-likelihood improves by less.
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { max_iter: 200, tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub weights: Vec<f64>,
    pub components: Vec<GaussianParams>,
    /// Mean per-sample log-likelihood after each E-step.
    pub log_likelihood: Vec<f64>,
    /// Components that were re-seeded or regularized.
    pub repaired: usize,
}

fn sample_moments(y: &DMatrix<f64>, resp: &[f64], k: usize, j: usize) -> (f64, DVector<f64>, DMatrix<f64>) {
    let (n, d) = y.shape();
    let mut nk = 0.0;
    let mut mean = DVector::zeros(d);
    for i in 0..n {
        let r = resp[i * k + j];
        nk += r;
        for c in 0..d {
            mean[c] += r * y[(i, c)];
        }
    }
    if nk <= 0.0 {
        return (0.0, mean, DMatrix::zeros(d, d));
    }
    mean /= nk;
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let r = resp[i * k + j];
        if r == 0.0 {
            continue;
        }
        for a in 0..d {
            let da = y[(i, a)] - mean[a];
            for b in 0..=a {
                cov[(a, b)] += r * da * (y[(i, b)] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    (nk, mean, cov / nk)
}

/// `cov` if numerically positive definite, else `cov + 1e-6·(scale)·I`.
fn regularize(cov: DMatrix<f64>, fallback_scale: f64) -> (DMatrix<f64>, bool) {
    let d = cov.nrows();
    let level = cov.trace() / d as f64;
    let scale = if level > 0.0 { level } else { fallback_scale.max(1e-12) };
    if SymEig::new(&cov).min_value() > 1e-10 * scale {
        return (cov, false);
    }
    (cov + DMatrix::identity(d, d) * (1e-6 * scale), true)
}

/// Full-covariance EM for a `k`-component mixture on the rows of `y`,
/// started from seeded k-means++.
pub fn fit_gmm_em(y: &DMatrix<f64>, k: usize, seed: u64, cfg: &EmConfig) -> Result<GmmFit> {
    let (n, d) = y.shape();
    if n == 0 || d == 0 {
        return Err(Error::EmptyInput("samples"));
    }
    if k == 0 {
        return Err(config_err("k", "must be positive"));
    }
    if n < k * (d + 1) {
        return Err(Error::InsufficientSamples {
            need: k * (d + 1),
            have: n,
        });
    }
    let flat: Vec<f64> = (0..n).flat_map(|i| (0..d).map(move |c| y[(i, c)])).collect();
    let global = {
        let ones = vec![1.0; n];
        sample_moments(y, &ones, 1, 0).2
    };
    let global_scale = global.trace() / d as f64;
    let init = kmeans(&flat, d, k, 1, seed)?;
    let mut resp = vec![0.0; n * k];
    for (i, l) in init.labels.iter().enumerate() {
        resp[i * k + l] = 1.0;
    }
    let mut repaired = 0;
    let mut reseeded = vec![false; k];
    let mut weights = vec![0.0; k];
    let mut components: Vec<GaussianParams> = Vec::with_capacity(k);
    let mut trace = Vec::new();
    let mut logp = vec![0.0; k];
    for iter in 0..=cfg.max_iter {
        // M-step.
        components.clear();
        for j in 0..k {
            let (nk, mean, cov) = sample_moments(y, &resp, k, j);
            let (mean, cov, nk) = if nk < 1e-10 * n as f64 {
                repaired += 1;
                if !reseeded[j] {
                    reseeded[j] = true;
                    // Re-seed at the sample worst explained by the current fit.
                    let worst = if iter == 0 {
                        j % n
                    } else {
                        (0..n)
                            .min_by(|&a, &b| {
                                let la = (0..k).map(|c| resp[a * k + c]).fold(0.0, f64::max);
                                let lb = (0..k).map(|c| resp[b * k + c]).fold(0.0, f64::max);
                                la.total_cmp(&lb)
                            })
                            .unwrap()
                    };
                    (DVector::from_iterator(d, (0..d).map(|c| y[(worst, c)])), global.clone(), 1.0)
                } else {
                    (mean, global.clone(), 1.0)
                }
            } else {
                (mean, cov, nk)
            };
            let (cov, fixed) = regularize(symmetrize(&cov), global_scale);
            repaired += fixed as usize;
            weights[j] = nk;
            components.push(GaussianParams::new(mean, cov)?);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        // E-step.
        let dens: Vec<_> = components
            .iter()
            .map(|c| c.density().ok_or(Error::NotPositiveDefinite(0.0)))
            .collect::<Result<_>>()?;
        let logw: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        let mut ll = 0.0;
        for i in 0..n {
            let row = &flat[i * d..(i + 1) * d];
            let mut m = f64::NEG_INFINITY;
            for j in 0..k {
                logp[j] = logw[j] + dens[j].eval(row);
                m = m.max(logp[j]);
            }
            let s: f64 = logp.iter().map(|v| (v - m).exp()).sum();
            let lse = m + s.ln();
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (logp[j] - lse).exp();
            }
        }
        ll /= n as f64;
        let done = trace.last().is_some_and(|prev: &f64| ll - prev < cfg.tol);
        trace.push(ll);
        if done {
            break;
        }
    }
    Ok(GmmFit {
        weights,
        components,
        log_likelihood: trace,
        repaired,
    })
}

/// Starting parameters and the fitted pure-state prior.
#[derive(Debug, Clone)]
pub struct Initialization {
    pub params: DwbParams,
    pub prior: ThetaPriorConfig,
    /// Fewer distinguishable clusters than states; some states were duplicated.
    pub duplicated_states: bool,
}

fn pooled(windows: &[&GaussianParams]) -> GaussianParams {
    let d = windows[0].dim();
    let n = windows.len() as f64;
    let mean = windows.iter().fold(DVector::zeros(d), |acc, w| acc + w.mean()) / n;
    let mut cov = DMatrix::zeros(d, d);
    for w in windows {
        let dm = w.mean() - &mean;
        cov += w.cov() + &dm * dm.transpose();
    }
    GaussianParams::from_parts_unchecked(mean, symmetrize(&(cov / n)))
}

/// Window features `[m, vech(S^½)]` with off-diagonals scaled by `√2`, so the
/// squared feature distance is `‖Δm‖² + ‖ΔS^½‖²_F`.
fn window_features(data: &EmpiricalSequence) -> Vec<f64> {
    let d = data.dim();
    let mut out = Vec::with_capacity(data.len() * (d + d * (d + 1) / 2));
    for w in data.windows() {
        out.extend(w.mean().iter());
        let r = SymEig::new(w.cov()).sqrt();
        for i in 0..d {
            out.push(r[(i, i)]);
            for j in 0..i {
                out.push(r[(i, j)] * std::f64::consts::SQRT_2);
            }
        }
    }
    out
}

/// Per-label sample moments of the rows of `series`.
pub fn states_from_labels(series: &DMatrix<f64>, labels: &[usize], k: usize) -> Result<PureStates> {
    let (n, d) = series.shape();
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if let Some(l) = labels.iter().find(|&&l| l >= k) {
        return Err(config_err("labels", format!("label {l} out of range for {k} states")));
    }
    let mut states = Vec::with_capacity(k);
    for j in 0..k {
        let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == j).collect();
        if rows.len() < d + 1 {
            return Err(Error::InsufficientSamples {
                need: d + 1,
                have: rows.len(),
            });
        }
        let m = rows.len() as f64;
        let mean = rows.iter().fold(DVector::zeros(d), |acc, &i| acc + series.row(i).transpose()) / m;
        let mut cov = DMatrix::zeros(d, d);
        for &i in &rows {
            let dm = series.row(i).transpose() - &mean;
            cov += &dm * dm.transpose();
        }
        let (cov, _) = regularize(symmetrize(&(cov / (m - 1.0))), 1.0);
        states.push(GaussianParams::new(mean, cov)?);
    }
    PureStates::new(states)
}

/// Starting point of a fit: `γ = 1e-6`, uniform `x0`, initial `H`, pure
/// states from labels or from clustering the windows, and the pure-state prior
/// centered at the global mean with `σ0²` the average covariance eigenvalue
/// of a `k`-component EM fit.
pub fn initialize(
    series: &DMatrix<f64>,
    data: &EmpiricalSequence,
    k: usize,
    labels: Option<&[usize]>,
    s: f64,
    seed: u64,
) -> Result<Initialization> {
    if k == 0 {
        return Err(config_err("k", "must be positive"));
    }
    let (n, d) = series.shape();
    if d != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: d,
        });
    }
    let mut duplicated = false;
    let theta = match labels {
        Some(l) => states_from_labels(series, l, k)?,
        None => {
            let feats = window_features(data);
            let dim = feats.len() / data.len();
            let cl = kmeans(&feats, dim, k.min(data.len()), 8, seed)?;
            let mut groups: Vec<Vec<&GaussianParams>> = vec![Vec::new(); k];
            for (t, &l) in cl.labels.iter().enumerate() {
                groups[l].push(&data.windows()[t]);
            }
            let largest = (0..k).max_by_key(|&j| groups[j].len()).unwrap();
            let mut states = Vec::with_capacity(k);
            for j in 0..k {
                let g = if groups[j].is_empty() {
                    duplicated = true;
                    log::warn!("state {j} has no windows; duplicating state {largest}");
                    &groups[largest]
                } else {
                    &groups[j]
                };
                states.push(pooled(g));
            }
            // Order states by first appearance so runs are comparable.
            let mut first: Vec<(usize, usize)> = (0..k)
                .map(|j| (cl.labels.iter().position(|&l| l == j).unwrap_or(usize::MAX), j))
                .collect();
            first.sort();
            PureStates::new(first.iter().map(|&(_, j)| states[j].clone()).collect())?
        }
    };
    let m0 = series.row_sum().transpose() / n as f64;
    let em = fit_gmm_em(series, k, seed, &EmConfig::default())?;
    let avg_eig = em.components.iter().map(|c| c.cov().trace()).sum::<f64>() / (k * d) as f64;
    let prior = ThetaPriorConfig::new(m0, avg_eig.sqrt(), s, data.len() as f64)?;
    let params = DwbParams {
        seq: InnovationSequence::constant(SimplexWeights::uniform(k), data.len(), GAMMA_EPS)?,
        theta,
        hyper: BetaMixtureHyper::initial(k),
    };
    Ok(Initialization {
        params,
        prior,
        duplicated_states: duplicated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{window_series, WindowConfig};
    use crate::simplex::unroll;
    use approx::assert_relative_eq;

    fn draw(rng: &mut ChaCha8Rng, g: &GaussianParams, n: usize) -> Vec<f64> {
        g.sample(rng, n)
    }

    const BLOB: usize = 5000;

    fn blobs(seed: u64) -> (DMatrix<f64>, Vec<DVector<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = vec![DVector::from_vec(vec![-5.0, 0.0]), DVector::from_vec(vec![5.0, 2.0])];
        let mut rows = Vec::new();
        for c in &centers {
            rows.extend(draw(&mut rng, &GaussianParams::isotropic(c.clone(), 1.0).unwrap(), BLOB));
        }
        (DMatrix::from_row_slice(2 * BLOB, 2, &rows), centers)
    }

    #[test]
    fn single_component_em_is_sample_moments() {
        let (y, _) = blobs(1);
        let fit = fit_gmm_em(&y, 1, 0, &EmConfig::default()).unwrap();
        let n = y.nrows() as f64;
        let mean = y.row_sum().transpose() / n;
        let mut cov = DMatrix::zeros(2, 2);
        for r in y.row_iter() {
            let dm = r.transpose() - &mean;
            cov += &dm * dm.transpose();
        }
        cov /= n;
        assert!((fit.components[0].mean() - mean).norm() < 1e-10);
        assert!((fit.components[0].cov() - cov).norm() < 1e-9);
    }

    #[test]
    fn two_blobs_are_recovered_and_likelihood_is_monotone() {
        let (y, centers) = blobs(2);
        let fit = fit_gmm_em(&y, 2, 7, &EmConfig::default()).unwrap();
        for c in &centers {
            let best = fit.components.iter().map(|g| (g.mean() - c).norm()).fold(f64::INFINITY, f64::min);
            assert!(best < 0.05, "center error {best}");
        }
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn kmeans_separates_blobs() {
        let (y, _) = blobs(3);
        let flat: Vec<f64> = y.transpose().iter().cloned().collect();
        let cl = kmeans(&flat, 2, 2, 3, 1).unwrap();
        assert!(cl.labels[..BLOB].iter().all(|&l| l == cl.labels[0]));
        assert!(cl.labels[BLOB..].iter().all(|&l| l != cl.labels[0]));
    }

    #[test]
    fn sigma0_on_isotropic_unit_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = draw(&mut rng, &GaussianParams::standard(3), 6000);
        let y = DMatrix::from_row_slice(6000, 3, &rows);
        let data = window_series(&y, WindowConfig::new(50, 50).unwrap()).unwrap();
        let init = initialize(&y, &data, 2, None, 1.0, 3).unwrap();
        assert!((init.prior.sigma0 - 1.0).abs() < 0.1, "sigma0 {}", init.prior.sigma0);
        assert_eq!(init.prior.t_scale, data.len() as f64);
    }

    #[test]
    fn labels_give_per_label_moments_and_flat_start() {
        let (y, _) = blobs(4);
        let labels: Vec<usize> = (0..2 * BLOB).map(|i| if i < BLOB { 1 } else { 0 }).collect();
        let data = window_series(&y, WindowConfig::new(20, 40).unwrap()).unwrap();
        let init = initialize(&y, &data, 2, Some(&labels), 1.0, 0).unwrap();
        let top = y.rows(0, BLOB);
        let mean = top.row_sum().transpose() / BLOB as f64;
        assert!((init.params.theta.states()[1].mean() - mean).norm() < 1e-12);
        assert!(init.params.seq.gammas().iter().all(|&g| g == GAMMA_EPS));
        assert_eq!(init.params.seq.x0(), &SimplexWeights::uniform(2));
        for x in unroll(&init.params.seq) {
            for v in x.as_slice() {
                assert_relative_eq!(*v, 0.5, epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn too_many_states_are_duplicated() {
        let y = DMatrix::from_fn(60, 1, |i, _| (i % 3) as f64);
        let data = window_series(&y, WindowConfig::new(2, 30).unwrap()).unwrap();
        assert_eq!(data.len(), 2);
        let init = initialize(&y, &data, 3, None, 1.0, 0).unwrap();
        assert!(init.duplicated_states);
        assert_eq!(init.params.theta.k(), 3);
    }
}
