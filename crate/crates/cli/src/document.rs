//! JSON result documents.

use anyhow::{bail, Context, Result};
use dwb_core::estimator::{FitFlags, FitReport};
use dwb_core::eval::MetricReport;
use dwb_core::model::{DwbParams, PureStates, ThetaPriorConfig};
use dwb_core::simplex::{BetaMixtureHyper, InnovationSequence};
use dwb_core::{GaussianParams, SimplexWeights};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::config::RunConfig;

pub const FIT_KIND: &str = "dwb_fit";
pub const TRUTH_KIND: &str = "dwb_ground_truth";

/// Gaussian with a row-major full covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianDoc {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

impl From<&GaussianParams> for GaussianDoc {
    fn from(g: &GaussianParams) -> Self {
        let d = g.dim();
        GaussianDoc {
            mean: g.mean().iter().copied().collect(),
            cov: (0..d * d).map(|i| g.cov()[(i / d, i % d)]).collect(),
        }
    }
}

impl GaussianDoc {
    pub fn to_params(&self) -> Result<GaussianParams> {
        let d = self.mean.len();
        if self.cov.len() != d * d {
            bail!("covariance has {} entries, expected {}", self.cov.len(), d * d);
        }
        Ok(GaussianParams::new(
            DVector::from_column_slice(&self.mean),
            DMatrix::from_row_slice(d, d, &self.cov),
        )?)
    }
}

pub fn theta_doc(theta: &PureStates) -> Vec<GaussianDoc> {
    theta.states().iter().map(GaussianDoc::from).collect()
}

pub fn theta_from_doc(doc: &[GaussianDoc]) -> Result<PureStates> {
    let states = doc.iter().map(GaussianDoc::to_params).collect::<Result<Vec<_>>>()?;
    Ok(PureStates::new(states)?)
}

fn rows(states: &[SimplexWeights]) -> Vec<Vec<f64>> {
    states.iter().map(|x| x.as_slice().to_vec()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperDoc {
    pub w: Vec<f64>,
    pub a1: Vec<f64>,
    pub b1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorDoc {
    pub m0: Vec<f64>,
    pub sigma0: f64,
    pub s: f64,
    pub t_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsDoc {
    pub e_w: f64,
    pub e_nll: f64,
    pub mc_samples: usize,
    pub seed: u64,
    pub regularized_nll_windows: Vec<usize>,
}

impl MetricsDoc {
    pub fn new(m: &MetricReport, mc_samples: usize) -> Self {
        MetricsDoc {
            e_w: m.e_w,
            e_nll: m.e_nll,
            mc_samples,
            seed: m.seed,
            regularized_nll_windows: m.regularized_nll.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagsDoc {
    pub regularized_windows: Vec<usize>,
    pub duplicated_states: bool,
    pub adam_rollbacks: usize,
    pub adam_steps: usize,
    pub line_search_stalls: usize,
    pub line_search_iterations: usize,
    pub constraint_checks: usize,
}

impl From<&FitFlags> for FlagsDoc {
    fn from(f: &FitFlags) -> Self {
        FlagsDoc {
            regularized_windows: f.regularized_windows.clone(),
            duplicated_states: f.duplicated_states,
            adam_rollbacks: f.adam_rollbacks,
            adam_steps: f.adam_steps,
            line_search_stalls: f.line_search_stalls,
            line_search_iterations: f.line_search_iterations,
            constraint_checks: f.constraint_checks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDoc {
    pub path: String,
    pub rows: usize,
    pub dim: usize,
    pub time_column: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitDoc {
    pub kind: String,
    pub seed: u64,
    pub config: RunConfig,
    pub input: InputDoc,
    pub theta: Vec<GaussianDoc>,
    pub x0: Vec<f64>,
    /// `T × K` innovations.
    pub gammas: Vec<Vec<f64>>,
    pub hyper: HyperDoc,
    pub prior: PriorDoc,
    pub trajectory: Vec<Vec<f64>>,
    pub cost_trace: Vec<f64>,
    pub converged: bool,
    pub metrics: MetricsDoc,
    pub flags: FlagsDoc,
}

impl FitDoc {
    pub fn new(cfg: &RunConfig, input: InputDoc, r: &FitReport, metrics: MetricsDoc) -> Self {
        let p = &r.params;
        let k = p.seq.k();
        FitDoc {
            kind: FIT_KIND.into(),
            seed: cfg.seed,
            config: cfg.clone(),
            input,
            theta: theta_doc(&p.theta),
            x0: p.seq.x0().as_slice().to_vec(),
            gammas: p.seq.gammas().chunks(k).map(<[f64]>::to_vec).collect(),
            hyper: HyperDoc {
                w: p.hyper.w.clone(),
                a1: p.hyper.a1.clone(),
                b1: p.hyper.b1.clone(),
            },
            prior: PriorDoc {
                m0: r.prior.m0.iter().copied().collect(),
                sigma0: r.prior.sigma0,
                s: r.prior.s,
                t_scale: r.prior.t_scale,
            },
            trajectory: rows(&r.trajectory),
            cost_trace: r.cost_trace.clone(),
            converged: r.converged,
            metrics,
            flags: (&r.flags).into(),
        }
    }

    pub fn params(&self) -> Result<DwbParams> {
        let x0 = SimplexWeights::new(self.x0.clone()).context("field `x0`")?;
        let k = x0.len();
        if let Some(row) = self.gammas.iter().find(|g| g.len() != k) {
            bail!("field `gammas`: row of length {}, expected {k}", row.len());
        }
        let seq = InnovationSequence::new(x0, self.gammas.concat()).context("field `gammas`")?;
        let hyper = BetaMixtureHyper::new(self.hyper.w.clone(), self.hyper.a1.clone(), self.hyper.b1.clone())
            .context("field `hyper`")?;
        let theta = theta_from_doc(&self.theta).context("field `theta`")?;
        Ok(DwbParams { seq, theta, hyper })
    }

    pub fn prior(&self) -> Result<ThetaPriorConfig> {
        let p = &self.prior;
        Ok(ThetaPriorConfig::new(DVector::from_column_slice(&p.m0), p.sigma0, p.s, p.t_scale).context("field `prior`")?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthDoc {
    pub kind: String,
    pub seed: u64,
    pub config: RunConfig,
    pub samples_per_step: usize,
    pub theta: Vec<GaussianDoc>,
    /// State at every step.
    pub trajectory: Vec<Vec<f64>>,
}

impl TruthDoc {
    pub fn new(cfg: &RunConfig, samples_per_step: usize, theta: &PureStates, states: &[SimplexWeights]) -> Self {
        TruthDoc {
            kind: TRUTH_KIND.into(),
            seed: cfg.seed,
            config: cfg.clone(),
            samples_per_step,
            theta: theta_doc(theta),
            trajectory: rows(states),
        }
    }

    pub fn theta(&self) -> Result<PureStates> {
        theta_from_doc(&self.theta).context("field `theta`")
    }

    /// True state at the step holding each window's center sample.
    pub fn window_states(&self, n: usize, delta: usize, count: usize) -> Result<Vec<SimplexWeights>> {
        (0..count)
            .map(|t| {
                let step = (t * delta + n) / self.samples_per_step.max(1);
                let row = self
                    .trajectory
                    .get(step)
                    .with_context(|| format!("window {t} lies beyond the ground-truth trajectory"))?;
                Ok(SimplexWeights::new(row.clone())?)
            })
            .collect()
    }
}

fn check_kind(kind: &str, want: &str, path: &Path) -> Result<()> {
    if kind != want {
        bail!("{} is a `{kind}` document, expected `{want}`", path.display());
    }
    Ok(())
}

pub fn load_fit(path: &Path) -> Result<FitDoc> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: FitDoc = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    check_kind(&doc.kind, FIT_KIND, path)?;
    Ok(doc)
}

pub fn load_truth(path: &Path) -> Result<TruthDoc> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let doc: TruthDoc = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    check_kind(&doc.kind, TRUTH_KIND, path)?;
    Ok(doc)
}

pub fn to_json<T: Serialize>(doc: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(doc)?;
    v.push(b'\n');
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_round_trip_is_exact() {
        let g = GaussianParams::new(
            DVector::from_vec(vec![0.1, 1.0 / 3.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0 / 7.0]),
        )
        .unwrap();
        let text = serde_json::to_string(&GaussianDoc::from(&g)).unwrap();
        let back: GaussianDoc = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_params().unwrap(), g);
    }

    #[test]
    fn window_states_follow_centers() {
        let cfg = RunConfig::default();
        let states: Vec<SimplexWeights> = (0..4).map(|i| SimplexWeights::vertex(4, i)).collect();
        let theta = PureStates::new((0..4).map(|_| GaussianParams::standard(1)).collect()).unwrap();
        let doc = TruthDoc::new(&cfg, 10, &theta, &states);
        let w = doc.window_states(4, 10, 4).unwrap();
        assert_eq!(w, states);
        assert!(doc.window_states(4, 10, 5).is_err());
    }
}
