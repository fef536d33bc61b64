//! Subcommand drivers.

use anyhow::{bail, Context, Result};
use dwb_core::benchmark::{geometry_benchmark, write_benchmark_table};
use dwb_core::estimator::{fit as fit_model, FitReport};
use dwb_core::eval::{evaluate, score_against_truth, MonteCarlo};
use dwb_core::model::{window_series, Objective};
use dwb_core::simplex::unroll;
use dwb_core::synth::generate_toy;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use crate::config::RunConfig;
use crate::data::{read_series, series_csv, write_atomic};
use crate::document::{load_fit, load_truth, to_json, FitDoc, InputDoc, MetricsDoc, TruthDoc};
use crate::{BenchmarkArgs, Common, EvalArgs, FitArgs, SynthArgs};

/// Slack allowed on the outer-loop cost trace.
const MONOTONE_SLACK: f64 = 1e-9;

/// 3 for invariant violations, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> ExitCode {
    let invariant = e
        .chain()
        .any(|c| matches!(c.downcast_ref::<dwb_core::Error>(), Some(dwb_core::Error::InvariantViolation(_))));
    ExitCode::from(if invariant { 3 } else { 1 })
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p, common.preset)?,
        None => RunConfig::preset(common.preset),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.sequential {
        cfg.parallel = false;
    }
    Ok(cfg)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn read_labels(path: &Path, rows: usize) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::with_capacity(rows);
    for (i, line) in text.lines().enumerate().skip(1) {
        let cell = line.trim();
        if cell.is_empty() {
            continue;
        }
        out.push(
            cell.parse()
                .with_context(|| format!("{}: line {}: bad label {cell:?}", path.display(), i + 1))?,
        );
    }
    if out.len() != rows {
        bail!("{}: {} labels for {rows} samples", path.display(), out.len());
    }
    Ok(out)
}

fn check_trace(r: &FitReport) -> Result<()> {
    for (i, w) in r.cost_trace.windows(2).enumerate() {
        if w[1] > w[0] + MONOTONE_SLACK {
            return Err(dwb_core::Error::InvariantViolation(format!(
                "cost trace rose from {} to {} at outer iteration {i}",
                w[0], w[1]
            ))
            .into());
        }
    }
    Ok(())
}

fn window_table(doc: &FitDoc, per_w: &[f64], per_nll: &[f64]) -> Vec<u8> {
    let k = doc.x0.len();
    let mut out = String::from("window,start");
    for j in 0..k {
        out.push_str(&format!(",x{}", j + 1));
    }
    out.push_str(",w2,nll\n");
    for (t, x) in doc.trajectory.iter().enumerate() {
        out.push_str(&format!("{t},{}", t * doc.config.window.delta));
        for v in x {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(",{},{}\n", per_w[t], per_nll[t]));
    }
    out.into_bytes()
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let mut cfg = resolve(&a.common)?;
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(n) = a.window_n {
        cfg.window.n = n;
    }
    if let Some(d) = a.window_delta {
        cfg.window.delta = d;
    }
    if let Some(m) = a.max_outer {
        cfg.estimator.max_outer = m;
    }
    cfg.validate()?;
    let series = read_series(&a.input, a.time_column)?;
    let labels = a.labels.as_deref().map(|p| read_labels(p, series.rows())).transpose()?;
    let data = window_series(&series.values, cfg.window_config()?)?;
    let report = fit_model(
        &data,
        &series.values,
        cfg.k,
        labels.as_deref(),
        &cfg.fit_config(),
        cfg.seed,
    )?;
    check_trace(&report)?;
    let mc = MonteCarlo {
        samples: cfg.mc_samples,
        seed: cfg.seed,
    };
    let metrics = evaluate(&series.values, &data, &report.emissions, &mc, cfg.parallelism())?;
    let input = InputDoc {
        path: a.input.display().to_string(),
        rows: series.rows(),
        dim: series.dim(),
        time_column: series.time.is_some(),
    };
    let doc = FitDoc::new(&cfg, input, &report, MetricsDoc::new(&metrics, cfg.mc_samples));
    write_atomic(&a.out, &to_json(&doc)?)?;
    let table = a.table.clone().unwrap_or_else(|| sibling(&a.out, ".windows.csv"));
    write_atomic(&table, &window_table(&doc, &metrics.per_window_w, &metrics.per_window_nll))?;
    println!(
        "fit: {} windows, K={}, {} outer iterations, cost {:.6} -> {:.6}, e_W {:.6}, e_nll {:.6}",
        data.len(),
        cfg.k,
        report.outer_iterations(),
        report.cost_trace[0],
        report.final_cost(),
        metrics.e_w,
        metrics.e_nll
    );
    if !report.flags.regularized_windows.is_empty() {
        log::warn!("{} windows were regularized", report.flags.regularized_windows.len());
    }
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = resolve(&a.common)?;
    let s = &mut cfg.synth;
    if let Some(k) = a.k {
        s.k = k;
        // Keep the layout consistent with a new K unless it is given too.
        if a.holds.is_none() {
            s.holds = std::iter::once(1).chain(std::iter::repeat_n(0, k.saturating_sub(1))).collect();
        }
        if a.ramps.is_none() {
            s.ramps = vec![100; k.saturating_sub(1)];
        }
    }
    if let Some(d) = a.d {
        s.d = d;
    }
    if let Some(h) = &a.holds {
        s.holds = h.clone();
    }
    if let Some(r) = &a.ramps {
        s.ramps = r.clone();
    }
    if a.samples_per_step.is_some() {
        s.samples_per_step = a.samples_per_step;
    }
    cfg.validate()?;
    let spec = cfg.synth_spec();
    let toy = generate_toy(&spec)?;
    write_atomic(&a.out, &series_csv(&toy.series))?;
    let truth = TruthDoc::new(&cfg, spec.samples_per_step, &toy.theta, &toy.states);
    let truth_path = a.truth.clone().unwrap_or_else(|| sibling(&a.out, ".truth.json"));
    write_atomic(&truth_path, &to_json(&truth)?)?;
    println!(
        "synth: {} steps x {} samples, d={}, K={} -> {}",
        spec.steps(),
        spec.samples_per_step,
        spec.d,
        spec.k,
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalEntry {
    fit: String,
    mode: crate::config::Mode,
    seed: u64,
    metrics: MetricsDoc,
    #[serde(skip_serializing_if = "Option::is_none")]
    state_mae: Option<f64>,
    /// `perm[j]` is the fitted state matched to true state `j`.
    #[serde(skip_serializing_if = "Option::is_none")]
    perm: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_w2: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct EvalDoc {
    kind: &'static str,
    data: String,
    truth: Option<String>,
    entries: Vec<EvalEntry>,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let series = read_series(&a.data, a.time_column)?;
    let truth = a.truth.as_deref().map(load_truth).transpose()?;
    let mut entries = Vec::new();
    for path in &a.fits {
        let doc = load_fit(path)?;
        let mut cfg = doc.config.clone();
        if a.sequential {
            cfg.parallel = false;
        }
        let params = doc.params()?;
        if params.theta.dim() != series.dim() {
            return Err(dwb_core::Error::DimensionMismatch {
                expected: params.theta.dim(),
                found: series.dim(),
            })
            .with_context(|| format!("{} does not match {}", path.display(), a.data.display()));
        }
        let prior = doc.prior()?;
        let data = window_series(&series.values, cfg.window_config()?)?;
        if data.len() != params.seq.len() {
            bail!(
                "{}: fit has {} windows but the data yields {}",
                path.display(),
                params.seq.len(),
                data.len()
            );
        }
        let obj = Objective::new(&data, cfg.objective_config(), &prior)?.with_parallelism(cfg.parallelism());
        let emissions = obj.emissions(&params)?;
        let mc = MonteCarlo {
            samples: cfg.mc_samples,
            seed: cfg.seed,
        };
        let m = evaluate(&series.values, &data, &emissions, &mc, cfg.parallelism())?;
        let mut entry = EvalEntry {
            fit: path.display().to_string(),
            mode: cfg.mode,
            seed: cfg.seed,
            metrics: MetricsDoc::new(&m, cfg.mc_samples),
            state_mae: None,
            perm: None,
            theta_w2: None,
        };
        if let Some(t) = &truth {
            let states = t.window_states(cfg.window.n, cfg.window.delta, data.len())?;
            let score = score_against_truth(&unroll(&params.seq), &params.theta, &states, &t.theta()?)?;
            entry.state_mae = Some(score.state_mae);
            entry.perm = Some(score.perm);
            entry.theta_w2 = Some(score.theta_w2);
        }
        println!(
            "eval {}: mode {:?}, e_W {:.6}, e_nll {:.6}{}",
            path.display(),
            cfg.mode,
            m.e_w,
            m.e_nll,
            entry.state_mae.map(|v| format!(", state MAE {v:.6}")).unwrap_or_default()
        );
        entries.push(entry);
    }
    let mut table = String::from("fit,mode,e_w,e_nll,state_mae,theta_w2_mean\n");
    for e in &entries {
        let w2 = e
            .theta_w2
            .as_ref()
            .map(|v| (v.iter().sum::<f64>() / v.len() as f64).to_string())
            .unwrap_or_default();
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.fit,
            serde_json::to_value(e.mode)?.as_str().unwrap_or_default(),
            e.metrics.e_w,
            e.metrics.e_nll,
            e.state_mae.map(|v| v.to_string()).unwrap_or_default(),
            w2
        ));
    }
    let doc = EvalDoc {
        kind: "dwb_eval",
        data: a.data.display().to_string(),
        truth: a.truth.as_ref().map(|p| p.display().to_string()),
        entries,
    };
    write_atomic(&a.out, &to_json(&doc)?)?;
    let table_path = a.table.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    write_atomic(&table_path, table.as_bytes())?;
    Ok(())
}

pub fn benchmark(a: &BenchmarkArgs) -> Result<()> {
    let mut cfg = resolve(&a.common)?;
    if let Some(d) = &a.dims {
        cfg.benchmark.dims = d.clone();
    }
    if let Some(k) = &a.ks {
        cfg.benchmark.ks = k.clone();
    }
    if let Some(r) = a.repeats {
        cfg.benchmark.repeats = r;
    }
    cfg.validate()?;
    let b = &cfg.benchmark;
    let cells = b.dims.len() * b.ks.len() * b.repeats;
    if cells > b.max_cells && !a.force {
        bail!(
            "benchmark has {cells} cells, above the cap of {}; pass --force or raise benchmark.max_cells",
            b.max_cells
        );
    }
    if let Some(&d) = b.dims.iter().find(|&&d| d > 50).filter(|_| !a.force) {
        bail!("dimension {d} exceeds the recommended 50; pass --force to run it");
    }
    let rows = geometry_benchmark(&cfg.benchmark_config())?;
    let mut buf = Vec::new();
    write_benchmark_table(&rows, &mut buf)?;
    write_atomic(&a.out, &buf)?;
    println!("benchmark: {} rows -> {}", rows.len(), a.out.display());
    Ok(())
}
