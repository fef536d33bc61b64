//! Synthetic pure states and time series drawn from the displacement model.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{config_err, Error, Result};
use crate::gaussian::{GaussianParams, SimplexWeights};
use crate::linalg::symmetrize;
use crate::manifold::{bw_exp, bw_metric, geodesic_horizon};
use crate::model::{PureStates, WindowConfig};
use crate::ot::{barycenter_with_iters, bures_sq};

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs
/// of `R`'s diagonal folded into `Q`.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `Q Λ Qᵀ` with Haar `Q` and eigenvalues uniform in `[eig_low, eig_high]`.
pub fn random_spd_with<R: Rng + ?Sized>(d: usize, eig_low: f64, eig_high: f64, rng: &mut R) -> DMatrix<f64> {
    let q = random_orthogonal(d, rng);
    let lambda = DVector::from_fn(d, |_, _| rng.random_range(eig_low..=eig_high));
    symmetrize(&(&q * DMatrix::from_diagonal(&lambda) * q.transpose()))
}

pub fn random_spd(d: usize, eig_low: f64, eig_high: f64, seed: u64) -> Result<DMatrix<f64>> {
    if d == 0 {
        return Err(config_err("d", "must be positive"));
    }
    if !(eig_low > 0.0 && eig_low <= eig_high) {
        return Err(config_err("eig_low", "need 0 < eig_low <= eig_high"));
    }
    Ok(random_spd_with(d, eig_low, eig_high, &mut ChaCha8Rng::seed_from_u64(seed)))
}

const GEODESIC_RETRIES: usize = 10_000;

/// Moves `base` by squared distance `target_e2` on the mean (random
/// direction) and `target_b2` along a random Bures–Wasserstein geodesic.
pub fn place_on_geodesic_with<R: Rng + ?Sized>(
    base: &GaussianParams,
    target_e2: f64,
    target_b2: f64,
    rng: &mut R,
) -> Result<GaussianParams> {
    if !(target_e2 >= 0.0 && target_b2 >= 0.0) {
        return Err(config_err("targets", "must be nonnegative"));
    }
    let d = base.dim();
    let mut v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    while v.norm() == 0.0 {
        v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    }
    let mean = base.mean() + &v * (target_e2.sqrt() / v.norm());
    if target_b2 == 0.0 {
        return GaussianParams::new(mean, base.cov().clone());
    }
    let s = base.cov();
    for _ in 0..GEODESIC_RETRIES {
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let dir = symmetrize(&a);
        let g = bw_metric(s, &dir, &dir);
        if g <= 0.0 {
            continue;
        }
        // Squared length along the geodesic is t² g while it stays minimizing.
        let t = (target_b2 / g).sqrt();
        if t >= 0.95 * geodesic_horizon(s, &dir) {
            continue;
        }
        let cov = match bw_exp(s, &(&dir * t)) {
            Ok(c) => c,
            Err(Error::StepTooLarge(_)) => continue,
            Err(e) => return Err(e),
        };
        let cov = polish(s, &dir, t, cov, target_b2)?;
        return GaussianParams::new(mean, cov);
    }
    Err(Error::NumericalDomain("no admissible geodesic direction found".into()))
}

/// Bisection on the step so the Bures distance hits the target to `1e-8`.
fn polish(s: &DMatrix<f64>, dir: &DMatrix<f64>, t: f64, cov: DMatrix<f64>, target: f64) -> Result<DMatrix<f64>> {
    let at = |x: f64| -> Result<(f64, DMatrix<f64>)> {
        let c = bw_exp(s, &(dir * x))?;
        Ok((bures_sq(s, &c)? - target, c))
    };
    let err = bures_sq(s, &cov)? - target;
    if err.abs() <= 1e-10 * target.max(1.0) {
        return Ok(cov);
    }
    let (mut lo, mut hi) = if err < 0.0 { (t, t * 1.01) } else { (t * 0.99, t) };
    let mut best = cov;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (e, c) = at(mid)?;
        best = c;
        if e.abs() <= 1e-10 * target.max(1.0) {
            break;
        }
        if e < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

pub fn place_on_geodesic(base: &GaussianParams, target_e2: f64, target_b2: f64, seed: u64) -> Result<GaussianParams> {
    place_on_geodesic_with(base, target_e2, target_b2, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Layout and geometry of a synthetic series. The state holds at `e_1` for
/// `holds[0]` steps, ramps linearly to `e_2` over `ramps[0]` steps (the last
/// of which lands on `e_2`), holds there for `holds[1]` steps, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub k: usize,
    pub d: usize,
    pub holds: Vec<usize>,
    pub ramps: Vec<usize>,
    pub samples_per_step: usize,
    /// Squared mean distance between consecutive pure states.
    pub e2: f64,
    /// Squared Bures distance between consecutive pure states.
    pub b2: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Three states, a 1000-step ramp then a 799-step ramp, 1800 steps in all.
    pub fn fig1(d: usize, seed: u64) -> Self {
        SynthSpec {
            k: 3,
            d,
            holds: vec![1, 0, 0],
            ramps: vec![1000, 799],
            samples_per_step: 20 * d,
            e2: 1.0,
            b2: 4.0,
            seed,
        }
    }

    /// 100 equi-spaced steps from `e_1` to `e_2`, continuing to `e_3` over
    /// another 100 when `k = 3`.
    pub fn optimization(d: usize, k: usize, seed: u64) -> Self {
        let mut holds = vec![0; k];
        holds[0] = 1;
        let mut ramps = vec![100; k.saturating_sub(1)];
        if let Some(r) = ramps.first_mut() {
            *r = 99;
        }
        SynthSpec {
            k,
            d,
            holds,
            ramps,
            samples_per_step: 20 * d,
            e2: 1.0,
            b2: 4.0,
            seed,
        }
    }

    pub fn steps(&self) -> usize {
        self.holds.iter().sum::<usize>() + self.ramps.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(config_err("k", "must be positive"));
        }
        if self.d == 0 {
            return Err(config_err("d", "must be positive"));
        }
        if self.holds.len() != self.k {
            return Err(config_err("holds", format!("need {} entries", self.k)));
        }
        if self.ramps.len() + 1 != self.k {
            return Err(config_err("ramps", format!("need {} entries", self.k - 1)));
        }
        if self.steps() == 0 {
            return Err(config_err("holds", "series has no steps"));
        }
        if self.samples_per_step < 2 {
            return Err(config_err("samples_per_step", "need at least 2"));
        }
        if !(self.e2 > 0.0 && self.b2 >= 0.0) {
            return Err(config_err("e2", "distances must be positive"));
        }
        Ok(())
    }

    /// State at every step.
    pub fn trajectory(&self) -> Vec<SimplexWeights> {
        let k = self.k;
        let mut out = Vec::with_capacity(self.steps());
        for j in 0..k {
            out.extend(std::iter::repeat_n(SimplexWeights::vertex(k, j), self.holds[j]));
            if j + 1 < k {
                let r = self.ramps[j];
                for i in 0..r {
                    let s = (i + 1) as f64 / r as f64;
                    let mut w = vec![0.0; k];
                    w[j] = 1.0 - s;
                    w[j + 1] = s;
                    out.push(SimplexWeights::project(w));
                }
            }
        }
        out
    }
}

/// A generated series with its ground truth.
#[derive(Debug, Clone)]
pub struct ToyData {
    pub spec: SynthSpec,
    /// `(steps · samples_per_step) × d`.
    pub series: DMatrix<f64>,
    /// Ground-truth state at each step.
    pub states: Vec<SimplexWeights>,
    pub theta: PureStates,
    /// Exact emission at each step.
    pub emissions: Vec<GaussianParams>,
}

impl ToyData {
    /// Windows covering one step's samples (`2n + 1 ≤ samples_per_step`),
    /// taken every `stride` steps.
    pub fn window_config(&self, stride: usize) -> Result<WindowConfig> {
        let spw = self.spec.samples_per_step;
        WindowConfig::new((spw - 1) / 2, spw * stride.max(1))
    }

    /// Ground-truth state of each window for [`ToyData::window_config`].
    pub fn window_states(&self, stride: usize) -> Vec<SimplexWeights> {
        self.states.iter().step_by(stride.max(1)).cloned().collect()
    }

    pub fn window_emissions(&self, stride: usize) -> Vec<GaussianParams> {
        self.emissions.iter().step_by(stride.max(1)).cloned().collect()
    }

    /// Index of the dominant state for every sample.
    pub fn sample_labels(&self) -> Vec<usize> {
        let spw = self.spec.samples_per_step;
        self.states
            .iter()
            .flat_map(|x| {
                let s = x.as_slice();
                let top = (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
                std::iter::repeat_n(top, spw)
            })
            .collect()
    }
}

/// Chain of `k` pure states, each `(e2, b2)` away from the previous one; the
/// first has a standard normal mean and a random SPD covariance.
pub fn random_pure_states<R: Rng + ?Sized>(k: usize, d: usize, e2: f64, b2: f64, rng: &mut R) -> Result<PureStates> {
    let m1 = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut states = vec![GaussianParams::new(m1, random_spd_with(d, 0.5, 1.5, rng))?];
    while states.len() < k {
        let next = place_on_geodesic_with(states.last().unwrap(), e2, b2, rng)?;
        states.push(next);
    }
    PureStates::new(states)
}

const TRUTH_ITERS: usize = 50;

/// Draws pure states and samples `samples_per_step` points per step from the
/// exact barycenter at that step's state.
pub fn generate_toy(spec: &SynthSpec) -> Result<ToyData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let theta = random_pure_states(spec.k, spec.d, spec.e2, spec.b2, &mut rng)?;
    generate_from_states(spec, theta, &mut rng)
}

/// Like [`generate_toy`] with given pure states.
pub fn generate_from_states<R: Rng + ?Sized>(spec: &SynthSpec, theta: PureStates, rng: &mut R) -> Result<ToyData> {
    spec.validate()?;
    if theta.k() != spec.k || theta.dim() != spec.d {
        return Err(Error::DimensionMismatch {
            expected: spec.k,
            found: theta.k(),
        });
    }
    let states = spec.trajectory();
    let emissions: Vec<GaussianParams> = states
        .iter()
        .map(|x| barycenter_with_iters(x, theta.states(), TRUTH_ITERS))
        .collect::<Result<_>>()?;
    let spw = spec.samples_per_step;
    let mut rows = Vec::with_capacity(states.len() * spw * spec.d);
    for e in &emissions {
        e.sample_into(rng, spw, &mut rows);
    }
    let series = DMatrix::from_row_slice(states.len() * spw, spec.d, &rows);
    Ok(ToyData {
        spec: spec.clone(),
        series,
        states,
        theta,
        emissions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymEig;
    use crate::model::window_series;
    use crate::ot::w2_gaussian;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in [1, 3, 8] {
            let q = random_orthogonal(d, &mut rng);
            assert!((q.transpose() * &q - DMatrix::identity(d, d)).norm() < 1e-12);
        }
    }

    #[test]
    fn spd_eigenvalues_in_range_and_seeded() {
        for d in [1, 4, 10] {
            let s = random_spd(d, 0.5, 1.5, 9).unwrap();
            let e = SymEig::new(&s);
            assert!(e.min_value() >= 0.5 - 1e-10 && e.max_value() <= 1.5 + 1e-10);
            assert_eq!(s, random_spd(d, 0.5, 1.5, 9).unwrap());
        }
    }

    #[test]
    fn geodesic_placement_hits_five() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [1, 2, 5] {
            let base = GaussianParams::new(DVector::zeros(d), random_spd_with(d, 0.5, 1.5, &mut rng)).unwrap();
            let p = place_on_geodesic_with(&base, 1.0, 4.0, &mut rng).unwrap();
            assert!((w2_gaussian(&base, &p).unwrap() - 5.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_bures_target_only_shifts_the_mean() {
        let base = GaussianParams::new(DVector::zeros(2), random_spd(2, 0.5, 1.5, 1).unwrap()).unwrap();
        let p = place_on_geodesic(&base, 2.0, 0.0, 4).unwrap();
        assert_eq!(p.cov(), base.cov());
        assert_relative_eq!((p.mean() - base.mean()).norm_squared(), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn scalar_placement_moves_the_standard_deviation() {
        let base = GaussianParams::new(DVector::zeros(1), DMatrix::from_element(1, 1, 0.81)).unwrap();
        let p = place_on_geodesic(&base, 1.0, 0.25, 2).unwrap();
        let sd = p.cov()[(0, 0)].sqrt();
        assert!((sd - 1.4).abs() < 1e-8 || (sd - 0.4).abs() < 1e-8, "sd {sd}");
    }

    #[test]
    fn trajectories_follow_the_layout() {
        let spec = SynthSpec::fig1(2, 0);
        let x = spec.trajectory();
        assert_eq!(x.len(), 1800);
        assert_eq!(x[0], SimplexWeights::vertex(3, 0));
        assert_eq!(x[1000], SimplexWeights::vertex(3, 1));
        assert_eq!(x[1799], SimplexWeights::vertex(3, 2));
        let opt = SynthSpec::optimization(4, 3, 0);
        assert_eq!(opt.trajectory().len(), 200);
        assert_eq!(opt.trajectory()[99], SimplexWeights::vertex(3, 1));
        let two = SynthSpec {
            holds: vec![5, 5],
            ramps: vec![10],
            ..SynthSpec::optimization(1, 2, 0)
        };
        let x = two.trajectory();
        assert!(x[..5].iter().all(|v| *v == SimplexWeights::vertex(2, 0)));
        assert!(x[14..].iter().all(|v| *v == SimplexWeights::vertex(2, 1)));
    }

    #[test]
    fn endpoints_are_pure_states() {
        let toy = generate_toy(&SynthSpec::optimization(2, 3, 5)).unwrap();
        assert_eq!(toy.emissions[0], toy.theta.states()[0]);
        assert_eq!(*toy.emissions.last().unwrap(), toy.theta.states()[2]);
        assert_eq!(toy.series.nrows(), 200 * 40);
    }

    #[test]
    fn mid_ramp_windows_sit_between_the_endpoints() {
        let spec = SynthSpec {
            samples_per_step: 4000,
            ..SynthSpec::optimization(2, 2, 11)
        };
        let toy = generate_toy(&spec).unwrap();
        let data = window_series(&toy.series, toy.window_config(1).unwrap()).unwrap();
        let mid = &data.windows()[50];
        let to_bary = w2_gaussian(mid, &toy.emissions[50]).unwrap();
        for st in toy.theta.states() {
            assert!(to_bary < w2_gaussian(mid, st).unwrap());
        }
    }

    #[test]
    fn window_error_shrinks_with_more_samples() {
        let err = |spw: usize| {
            let spec = SynthSpec {
                samples_per_step: spw,
                ..SynthSpec::optimization(2, 2, 7)
            };
            let toy = generate_toy(&spec).unwrap();
            let data = window_series(&toy.series, toy.window_config(1).unwrap()).unwrap();
            data.windows()
                .iter()
                .zip(&toy.emissions)
                .map(|(a, b)| w2_gaussian(a, b).unwrap())
                .sum::<f64>()
                / data.len() as f64
        };
        let (small, large) = (err(40), err(400));
        assert!(large < 0.3 * small, "{small} vs {large}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn placement_targets_met(seed in any::<u64>(), d in 1usize..6) {
            let base = GaussianParams::new(DVector::zeros(d), random_spd(d, 0.5, 1.5, seed).unwrap()).unwrap();
            let p = place_on_geodesic(&base, 1.0, 4.0, seed ^ 0xabc).unwrap();
            prop_assert!((w2_gaussian(&base, &p).unwrap() - 5.0).abs() < 1e-6);
        }
    }
}
