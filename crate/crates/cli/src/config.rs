//! Run configuration: JSON file, presets, and conversion to library types.

use anyhow::{bail, Context, Result};
use dwb_core::benchmark::BenchmarkConfig;
use dwb_core::estimator::{AdamConfig, FitConfig, Geometry, InnerConfig, LineSearchConfig};
use dwb_core::model::{InnovationPrior, Interpolation, ObjectiveConfig, WindowConfig};
use dwb_core::synth::SynthSpec;
use dwb_core::Parallelism;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Dwb,
    Gmm,
}

impl Mode {
    pub fn interpolation(self) -> Interpolation {
        match self {
            Mode::Dwb => Interpolation::Barycenter,
            Mode::Gmm => Interpolation::GmmLinear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Default,
    /// Bee-trajectory windows (n=100, δ=25).
    Bt,
    /// Accelerometer windows (n=250, δ=125).
    Msr,
    /// Windows matching `synth` output with `samples_per_step = 20d`.
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub n: usize,
    pub delta: usize,
}

impl Default for WindowSection {
    fn default() -> Self {
        let w = WindowConfig::bt();
        WindowSection { n: w.n, delta: w.delta }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSection {
    Mixture,
    SingleBeta { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSection {
    pub lambda: f64,
    pub fixed_point_iters: usize,
    pub innovation_prior: PriorSection,
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        let o = ObjectiveConfig::default();
        ObjectiveSection {
            lambda: o.lambda,
            fixed_point_iters: o.fixed_point_iters,
            innovation_prior: PriorSection::Mixture,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineSearchSection {
    pub alpha0: f64,
    pub beta: f64,
    pub c: f64,
    pub eta: f64,
    pub max_sweeps: usize,
    pub min_alpha: f64,
}

impl From<LineSearchConfig> for LineSearchSection {
    fn from(l: LineSearchConfig) -> Self {
        LineSearchSection {
            alpha0: l.alpha0,
            beta: l.beta,
            c: l.c,
            eta: l.eta,
            max_sweeps: l.max_sweeps,
            min_alpha: l.min_alpha,
        }
    }
}

impl From<LineSearchSection> for LineSearchConfig {
    fn from(l: LineSearchSection) -> Self {
        LineSearchConfig {
            alpha0: l.alpha0,
            beta: l.beta,
            c: l.c,
            eta: l.eta,
            max_sweeps: l.max_sweeps,
            min_alpha: l.min_alpha,
        }
    }
}

impl Default for LineSearchSection {
    fn default() -> Self {
        LineSearchConfig::default().into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        AdamSection {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryName {
    BuresWasserstein,
    EuclideanCholesky,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub eta: f64,
    pub max_outer: usize,
    pub inner_max_steps: usize,
    pub inner_sweep: usize,
    pub inner_eta: f64,
    /// Width of the pure-state prior.
    pub s: f64,
    pub geometry: GeometryName,
    pub adam: AdamSection,
    pub line_search: LineSearchSection,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let f = FitConfig::default();
        EstimatorSection {
            eta: f.eta,
            max_outer: f.max_outer,
            inner_max_steps: f.inner.max_steps,
            inner_sweep: f.inner.sweep,
            inner_eta: f.inner.eta,
            s: f.s,
            geometry: GeometryName::BuresWasserstein,
            adam: AdamSection::default(),
            line_search: LineSearchSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub k: usize,
    pub d: usize,
    pub holds: Vec<usize>,
    pub ramps: Vec<usize>,
    /// Defaults to `20 d` when absent.
    pub samples_per_step: Option<usize>,
    pub e2: f64,
    pub b2: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthSpec::fig1(2, 0);
        SynthSection {
            k: s.k,
            d: s.d,
            holds: s.holds,
            ramps: s.ramps,
            samples_per_step: None,
            e2: s.e2,
            b2: s.b2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub dims: Vec<usize>,
    pub ks: Vec<usize>,
    pub repeats: usize,
    pub line_search: LineSearchSection,
    /// Cells (d, K, repeat) allowed without `--force`.
    pub max_cells: usize,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        let b = BenchmarkConfig::default();
        BenchmarkSection {
            dims: b.dims,
            ks: b.ks,
            repeats: b.repeats,
            line_search: b.line_search.into(),
            max_cells: 16,
        }
    }
}

/// Every tunable of every command. Unknown keys are rejected at any level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub k: usize,
    pub mode: Mode,
    pub window: WindowSection,
    pub objective: ObjectiveSection,
    pub estimator: EstimatorSection,
    /// Points per cloud for Monte-Carlo distances to mixtures.
    pub mc_samples: usize,
    pub parallel: bool,
    pub synth: SynthSection,
    pub benchmark: BenchmarkSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            k: 3,
            mode: Mode::Dwb,
            window: WindowSection::default(),
            objective: ObjectiveSection::default(),
            estimator: EstimatorSection::default(),
            mc_samples: 5000,
            parallel: true,
            synth: SynthSection::default(),
            benchmark: BenchmarkSection::default(),
        }
    }
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let mut c = RunConfig::default();
        match p {
            Preset::Default | Preset::Bt => {}
            Preset::Msr => {
                let w = WindowConfig::msr();
                c.window = WindowSection { n: w.n, delta: w.delta };
            }
            Preset::Toy => {
                let spw = 20 * c.synth.d;
                c.window = WindowSection {
                    n: (spw - 1) / 2,
                    delta: spw,
                };
            }
        }
        c
    }

    /// Reads a config file; fields it omits keep the preset's values.
    pub fn load(path: &Path, preset: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let overlay: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let mut base = serde_json::to_value(RunConfig::preset(preset))?;
        merge(&mut base, overlay);
        let cfg: RunConfig =
            serde_json::from_value(base).with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn window_config(&self) -> Result<WindowConfig> {
        Ok(WindowConfig::new(self.window.n, self.window.delta).context("config field `window`")?)
    }

    pub fn parallelism(&self) -> Parallelism {
        if self.parallel {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        }
    }

    pub fn objective_config(&self) -> ObjectiveConfig {
        let o = &self.objective;
        ObjectiveConfig {
            lambda: o.lambda,
            interpolation: self.mode.interpolation(),
            innovation_prior: match o.innovation_prior {
                PriorSection::Mixture => InnovationPrior::Mixture,
                PriorSection::SingleBeta { a, b } => InnovationPrior::SingleBeta { a, b },
            },
            fixed_point_iters: o.fixed_point_iters,
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        let e = &self.estimator;
        FitConfig {
            objective: self.objective_config(),
            adam: AdamConfig {
                lr: e.adam.lr,
                beta1: e.adam.beta1,
                beta2: e.adam.beta2,
                eps: e.adam.eps,
            },
            inner: InnerConfig {
                max_steps: e.inner_max_steps,
                sweep: e.inner_sweep,
                eta: e.inner_eta,
            },
            line_search: e.line_search.into(),
            geometry: match e.geometry {
                GeometryName::BuresWasserstein => Geometry::BuresWasserstein,
                GeometryName::EuclideanCholesky => Geometry::EuclideanCholesky,
            },
            eta: e.eta,
            max_outer: e.max_outer,
            s: e.s,
            parallelism: self.parallelism(),
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        let s = &self.synth;
        SynthSpec {
            k: s.k,
            d: s.d,
            holds: s.holds.clone(),
            ramps: s.ramps.clone(),
            samples_per_step: s.samples_per_step.unwrap_or(20 * s.d),
            e2: s.e2,
            b2: s.b2,
            seed: self.seed,
        }
    }

    pub fn benchmark_config(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            dims: self.benchmark.dims.clone(),
            ks: self.benchmark.ks.clone(),
            repeats: self.benchmark.repeats,
            seed: self.seed,
            line_search: self.benchmark.line_search.into(),
            objective: self.objective_config(),
            parallelism: self.parallelism(),
        }
    }

    /// Checks every box constraint, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            bail!("invalid configuration field `k`: must be positive");
        }
        if self.mc_samples == 0 {
            bail!("invalid configuration field `mc_samples`: must be positive");
        }
        self.window_config()?;
        self.fit_config().validate()?;
        self.synth_spec().validate()?;
        LineSearchConfig::from(self.benchmark.line_search).validate()?;
        Ok(())
    }
}

/// Recursive object merge; non-object values replace.
fn merge(base: &mut serde_json::Value, overlay: serde_json::Value) {
    use serde_json::Value;
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    // Tagged enums are replaced wholesale so a kind switch
                    // does not inherit the old variant's fields.
                    Some(slot) if slot.is_object() && v.is_object() && v.get("kind").is_none() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}
