//! Pure-state optimization in Bures–Wasserstein versus Cholesky geometry on
//! simulated series with the trajectory pinned to the truth.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{config_err, Result};
use crate::estimator::{line_search, FixedTrajectory, Geometry, LineSearchConfig};
use crate::exec::Parallelism;
use crate::gaussian::GaussianParams;
use crate::linalg::symmetrize;
use crate::model::{window_series, EmpiricalSequence, Objective, ObjectiveConfig, PureStates, ThetaPriorConfig};
use crate::synth::{generate_toy, SynthSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub dims: Vec<usize>,
    pub ks: Vec<usize>,
    pub repeats: usize,
    /// Repeat `r` of each cell uses seed `seed + r`.
    pub seed: u64,
    pub line_search: LineSearchConfig,
    pub objective: ObjectiveConfig,
    pub parallelism: Parallelism,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            dims: vec![2, 5],
            ks: vec![2],
            repeats: 2,
            seed: 0,
            line_search: LineSearchConfig {
                max_sweeps: 10_000,
                eta: 0.01,
                ..LineSearchConfig::default()
            },
            objective: ObjectiveConfig::default(),
            parallelism: Parallelism::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub d: usize,
    pub k: usize,
    pub repeat: usize,
    pub geometry: Geometry,
    /// Line-search sweeps until convergence.
    pub iterations: usize,
    pub wall_ms: f64,
    pub final_cost: f64,
    pub stalled: bool,
}

pub fn geometry_name(g: Geometry) -> &'static str {
    match g {
        Geometry::BuresWasserstein => "bures_wasserstein",
        Geometry::EuclideanCholesky => "euclidean_cholesky",
    }
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

/// One simulated instance: windows, true states, a starting point from the
/// moments of the windows nearest each vertex, and the pure-state prior.
pub struct BenchmarkInstance {
    pub data: EmpiricalSequence,
    pub states: Vec<crate::gaussian::SimplexWeights>,
    pub start: PureStates,
    pub prior: ThetaPriorConfig,
    pub truth: PureStates,
}

pub fn benchmark_instance(d: usize, k: usize, seed: u64) -> Result<BenchmarkInstance> {
    let toy = generate_toy(&SynthSpec::optimization(d, k, seed))?;
    let data = window_series(&toy.series, toy.window_config(1)?)?;
    let states = toy.window_states(1);
    let mut groups: Vec<Vec<&GaussianParams>> = vec![Vec::new(); k];
    for (t, x) in states.iter().enumerate() {
        let s = x.as_slice();
        let top = (0..k).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        groups[top].push(&data.windows()[t]);
    }
    let start = PureStates::new(groups.iter().map(|g| pooled(g)).collect())?;
    let all: Vec<&GaussianParams> = data.windows().iter().collect();
    let global = pooled(&all);
    let sigma0 = (global.cov().trace() / d as f64).sqrt();
    let prior = ThetaPriorConfig::new(global.mean().clone(), sigma0, 1.0, data.len() as f64)?;
    Ok(BenchmarkInstance {
        data,
        states,
        start,
        prior,
        truth: toy.theta,
    })
}

/// Runs both geometries on one instance.
pub fn benchmark_cell(d: usize, k: usize, repeat: usize, cfg: &BenchmarkConfig) -> Result<Vec<BenchmarkRow>> {
    let inst = benchmark_instance(d, k, cfg.seed.wrapping_add(repeat as u64))?;
    let obj = Objective::new(&inst.data, cfg.objective, &inst.prior)?.with_parallelism(cfg.parallelism);
    let f = FixedTrajectory::from_states(&obj, &inst.states);
    let mut rows = Vec::with_capacity(2);
    for geometry in [Geometry::BuresWasserstein, Geometry::EuclideanCholesky] {
        let clock = Instant::now();
        let r = line_search(&inst.start, &f, &cfg.line_search, geometry)?;
        rows.push(BenchmarkRow {
            d,
            k,
            repeat,
            geometry,
            iterations: r.iterations,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            final_cost: r.final_cost,
            stalled: r.stalled,
        });
    }
    Ok(rows)
}

/// Every `(d, K, repeat)` cell, in that order.
pub fn geometry_benchmark(cfg: &BenchmarkConfig) -> Result<Vec<BenchmarkRow>> {
    if cfg.dims.is_empty() || cfg.ks.is_empty() || cfg.repeats == 0 {
        return Err(config_err("benchmark", "dims, ks and repeats must be nonempty"));
    }
    if let Some(k) = cfg.ks.iter().find(|&&k| k < 2) {
        return Err(config_err("ks", format!("{k} states; need at least 2")));
    }
    let mut rows = Vec::new();
    for &d in &cfg.dims {
        for &k in &cfg.ks {
            for r in 0..cfg.repeats {
                rows.extend(benchmark_cell(d, k, r, cfg)?);
            }
        }
    }
    Ok(rows)
}

pub const BENCHMARK_HEADER: &str = "d,K,repeat,geometry,iterations,wall_ms,final_cost";

pub fn write_benchmark_table<W: Write>(rows: &[BenchmarkRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{BENCHMARK_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.3},{:.17e}",
            r.d,
            r.k,
            r.repeat,
            geometry_name(r.geometry),
            r.iterations,
            r.wall_ms,
            r.final_cost
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoke_cell_agrees_and_is_quick() {
        let clock = Instant::now();
        let rows = benchmark_cell(2, 2, 0, &BenchmarkConfig::default()).unwrap();
        assert!(clock.elapsed().as_secs_f64() < 10.0);
        let (a, b) = (rows[0].final_cost, rows[1].final_cost);
        assert!((a - b).abs() <= 1e-3 * a.abs().max(b.abs()), "{a} vs {b}");
        let mut buf = Vec::new();
        write_benchmark_table(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), BENCHMARK_HEADER);
        assert_eq!(text.lines().count(), 3);
    }
}
