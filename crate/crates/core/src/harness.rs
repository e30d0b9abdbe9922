//! Multi-seed experiments. Each run draws a fresh MDP and solves it with
//! every configured algorithm; the resulting traces are step-held onto a
//! shared cost grid and averaged with standard-error bands.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bellman::optimal_value_oracle;
use crate::generators::{GeneratorError, GeneratorSpec};
use crate::mdp::Mdp;
use crate::samplers::{ActionSamplerConfig, SamplerConfig, SubsetMode};
use crate::solvers::{
    run, Algorithm, Budget, CostModel, InitSpec, RunConfig, Samplers, SolverError,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("generating the MDP for seed {seed}: {source}")]
    Generator {
        seed: u64,
        #[source]
        source: GeneratorError,
    },
    #[error("run with seed {seed}, algorithm {label}: {source}")]
    Run {
        seed: u64,
        label: String,
        #[source]
        source: SolverError,
    },
    #[error("oracle for seed {seed}: {message}")]
    Oracle { seed: u64, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn d_runs() -> usize {
    200
}
fn d_grid() -> usize {
    200
}
fn d_out() -> PathBuf {
    PathBuf::from("out")
}

/// One curve of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    /// Legend and CSV name; defaults to the algorithm name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub algorithm: Algorithm,
    /// Uniform subset size for DAVI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub cost_model: CostModel,
    /// Non-uniform state or action distributions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerConfig>,
}

impl AlgorithmConfig {
    pub fn new(algorithm: Algorithm, m: Option<usize>) -> Self {
        Self {
            label: None,
            algorithm,
            m,
            init: InitSpec::Zero,
            cost_model: CostModel::Lookahead,
            sampler: None,
        }
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.algorithm.to_string())
    }

    /// Subset size actually used: `m`, or the one in the sampler config.
    pub fn subset_size(&self) -> Option<usize> {
        self.m
            .or_else(|| self.sampler.as_ref()?.action.as_ref().map(|a| a.m))
    }

    fn samplers(&self, mdp: &Mdp) -> Result<Samplers, SolverError> {
        let mut cfg = self.sampler.clone().unwrap_or_default();
        if cfg.action.is_none() {
            cfg.action = self.m.map(|m| ActionSamplerConfig {
                mode: SubsetMode::Uniform,
                m,
                weights: None,
            });
        }
        let states = cfg.build_state(mdp)?;
        let actions = cfg.build_actions(mdp)?;
        Ok(Samplers { states, actions })
    }

    fn check(&self) -> Result<(), String> {
        let sampler_m = self
            .sampler
            .as_ref()
            .and_then(|s| s.action.as_ref())
            .map(|a| a.m);
        match (self.algorithm, self.m, sampler_m) {
            (Algorithm::Davi, None, None) => Err(format!("{}: DAVI needs m", self.label())),
            (_, Some(0), _) | (_, _, Some(0)) => {
                Err(format!("{}: m must be at least 1", self.label()))
            }
            (_, Some(a), Some(b)) if a != b => Err(format!(
                "{}: m = {a} disagrees with sampler m = {b}",
                self.label()
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output file stem.
    pub name: String,
    pub generator: GeneratorSpec,
    pub algorithms: Vec<AlgorithmConfig>,
    #[serde(default = "d_runs")]
    pub runs: usize,
    /// Cost budget per run.
    pub budget: u64,
    #[serde(default = "d_grid")]
    pub grid_points: usize,
    /// Run `i` uses seed `base_seed + i`.
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub tracked_state: usize,
    #[serde(default = "d_out")]
    pub output_dir: PathBuf,
    /// Thread count; `None` uses every core.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Also solve every instance exactly and report `v*(tracked)`.
    #[serde(default)]
    pub oracle: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return fail(format!("name {:?} is not a usable file stem", self.name));
        }
        if self.runs == 0 {
            return fail("runs must be at least 1".into());
        }
        if self.budget == 0 {
            return fail("budget must be positive".into());
        }
        if self.grid_points < 2 {
            return fail("grid_points must be at least 2".into());
        }
        if self.algorithms.is_empty() {
            return fail("no algorithms configured".into());
        }
        if self.workers == Some(0) {
            return fail("workers must be at least 1".into());
        }
        for alg in &self.algorithms {
            alg.check().map_err(HarnessError::Config)?;
        }
        self.generator
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// `budget · k / (grid_points − 1)` for `k = 0..grid_points`.
    pub fn grid(&self) -> Vec<f64> {
        let n = (self.grid_points - 1) as f64;
        (0..self.grid_points)
            .map(|k| self.budget as f64 * k as f64 / n)
            .collect()
    }
}

/// Mean tracked value over runs at each grid cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateCurve {
    pub label: String,
    pub algorithm: Algorithm,
    pub m: Option<usize>,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    /// Sample standard deviation over `√runs`; zero for a single run.
    pub sem: Vec<f64>,
    pub runs: usize,
}

impl AggregateCurve {
    /// Smallest grid cost at which the mean reaches `threshold`.
    pub fn first_reaching(&self, threshold: f64) -> Option<f64> {
        self.mean
            .iter()
            .position(|&v| v >= threshold)
            .map(|i| self.grid[i])
    }

    /// Mean at the largest grid cost `≤ cost`.
    pub fn mean_at(&self, cost: f64) -> f64 {
        let idx = self.grid.partition_point(|&g| g <= cost);
        self.mean[idx.saturating_sub(1)]
    }
}

/// Per-run bookkeeping kept for the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    /// SHA-256 of the serialized MDP every algorithm in this run solved.
    pub mdp_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub curves: Vec<AggregateCurve>,
    pub records: Vec<RunRecord>,
    /// Mean of `v*(tracked)` over runs when the oracle is enabled.
    pub oracle_mean: Option<f64>,
}

pub fn mdp_digest(mdp: &Mdp) -> String {
    hex::encode(Sha256::digest(mdp.to_json().as_bytes()))
}

struct RunOutput {
    record: RunRecord,
    /// `[algorithm][grid point]`.
    held: Vec<Vec<f64>>,
}

fn one_run(
    cfg: &ExperimentConfig,
    grid: &[f64],
    run_idx: usize,
) -> Result<RunOutput, HarnessError> {
    let seed = cfg.base_seed.wrapping_add(run_idx as u64);
    let mdp = cfg
        .generator
        .with_seed(seed)
        .generate()
        .map_err(|source| HarnessError::Generator { seed, source })?;
    let oracle_value = if cfg.oracle {
        let (v, _) = optimal_value_oracle(&mdp, 1e-12).map_err(|e| HarnessError::Oracle {
            seed,
            message: e.to_string(),
        })?;
        if cfg.tracked_state >= v.len() {
            return Err(HarnessError::Config(format!(
                "tracked state {} out of range",
                cfg.tracked_state
            )));
        }
        Some(v[cfg.tracked_state])
    } else {
        None
    };
    let mut held = Vec::with_capacity(cfg.algorithms.len());
    for (j, alg) in cfg.algorithms.iter().enumerate() {
        let fail = |source| HarnessError::Run {
            seed,
            label: alg.label(),
            source,
        };
        let samplers = alg.samplers(&mdp).map_err(fail)?;
        let rc = RunConfig {
            algorithm: alg.algorithm,
            init: alg.init.clone(),
            cost_model: alg.cost_model,
            budget: Budget::Cost(cfg.budget),
            tracked_state: cfg.tracked_state,
            seed,
            stream: j as u64 + 1,
            thinning: 1,
        };
        let trace = run(&mdp, &samplers, &rc).map_err(fail)?;
        held.push(grid.iter().map(|&g| trace.value_at_cost(g)).collect());
    }
    Ok(RunOutput {
        record: RunRecord {
            run: run_idx,
            seed,
            mdp_sha256: mdp_digest(&mdp),
            oracle_value,
        },
        held,
    })
}

/// Runs every configured algorithm on `runs` paired instances.
///
/// Results do not depend on the worker count: runs are collected by index
/// and reduced sequentially.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let grid = cfg.grid();
    let work = || -> Result<Vec<RunOutput>, HarnessError> {
        (0..cfg.runs)
            .into_par_iter()
            .map(|i| one_run(cfg, &grid, i))
            .collect()
    };
    let outputs = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };

    let runs = outputs.len();
    let curves = cfg
        .algorithms
        .iter()
        .enumerate()
        .map(|(j, alg)| {
            let (mean, sem) = (0..grid.len())
                .map(|k| mean_sem(outputs.iter().map(|o| o.held[j][k])))
                .unzip();
            AggregateCurve {
                label: alg.label(),
                algorithm: alg.algorithm,
                m: alg.subset_size(),
                grid: grid.clone(),
                mean,
                sem,
                runs,
            }
        })
        .collect();
    let records: Vec<RunRecord> = outputs.into_iter().map(|o| o.record).collect();
    let oracle_mean = cfg
        .oracle
        .then(|| records.iter().filter_map(|r| r.oracle_value).sum::<f64>() / runs as f64);
    Ok(ExperimentResult {
        config: cfg.clone(),
        curves,
        records,
        oracle_mean,
    })
}

fn mean_sem(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputPaths {
    pub csv: PathBuf,
    pub svg: PathBuf,
    pub manifest: PathBuf,
}

/// Long-format rows `algorithm,m,grid_cost,mean,sem,runs`.
pub fn curves_csv(curves: &[AggregateCurve]) -> String {
    let mut out = String::from("algorithm,m,grid_cost,mean,sem,runs\n");
    for c in curves {
        let m = c.m.map(|m| m.to_string()).unwrap_or_default();
        for k in 0..c.grid.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                c.label, m, c.grid[k], c.mean[k], c.sem[k], c.runs
            );
        }
    }
    out
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
    grid_points: usize,
    seeds: Vec<u64>,
    runs: &'a [RunRecord],
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_mean: Option<f64>,
    outputs: &'a OutputPaths,
}

/// Writes `<name>.csv`, `<name>.svg` and `<name>.manifest.json` into `dir`.
pub fn emit_outputs(result: &ExperimentResult, dir: &Path) -> Result<OutputPaths, HarnessError> {
    if result.curves.is_empty() {
        return Err(HarnessError::Config("no curves to write".into()));
    }
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = &result.config.name;
    let paths = OutputPaths {
        csv: dir.join(format!("{name}.csv")),
        svg: dir.join(format!("{name}.svg")),
        manifest: dir.join(format!("{name}.manifest.json")),
    };
    fs::write(&paths.csv, curves_csv(&result.curves)).map_err(io_err(&paths.csv))?;
    fs::write(&paths.svg, render_svg(result)).map_err(io_err(&paths.svg))?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: &result.config,
        grid_points: result.config.grid_points,
        seeds: result.records.iter().map(|r| r.seed).collect(),
        runs: &result.records,
        oracle_mean: result.oracle_mean,
        outputs: &paths,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&paths.manifest, text).map_err(io_err(&paths.manifest))?;
    Ok(paths)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Mean curves with ±SEM bands, axes, ticks and a legend.
pub fn render_svg(result: &ExperimentResult) -> String {
    const W: f64 = 800.0;
    const H: f64 = 500.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 180.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 60.0;
    let curves = &result.curves;
    let x_max = result.config.budget as f64;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in curves {
        for (m, s) in c.mean.iter().zip(&c.sem) {
            lo = lo.min(m - s);
            hi = hi.max(m + s);
        }
    }
    if let Some(o) = result.oracle_mean {
        lo = lo.min(o);
        hi = hi.max(o);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let px = |x: f64| LEFT + (W - LEFT - RIGHT) * x / x_max;
    let py = |y: f64| H - BOTTOM - (H - TOP - BOTTOM) * (y - lo) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        escape(&result.config.name)
    );
    let (x0, x1, y0, y1) = (px(0.0), px(x_max), py(lo), py(hi));
    let _ = writeln!(
        s,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black"/>"#
    );
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let (xv, yv) = (x_max * t, lo + (hi - lo) * t);
        let _ = writeln!(
            s,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="black"/><text x="{0:.2}" y="{3:.2}" text-anchor="middle">{4}</text>"#,
            px(xv),
            y0,
            y0 + 5.0,
            y0 + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}" stroke="black"/><text x="{3:.2}" y="{4:.2}" text-anchor="end">{5}</text>"#,
            x0 - 5.0,
            py(yv),
            x0,
            x0 - 8.0,
            py(yv) + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">cost (look-ahead evaluations)</text>"#,
        (x0 + x1) / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0:.2}" text-anchor="middle" transform="rotate(-90 18 {0:.2})">mean value of state {1}</text>"#,
        (y0 + y1) / 2.0,
        result.config.tracked_state
    );
    if let Some(o) = result.oracle_mean {
        let _ = writeln!(
            s,
            r#"<line x1="{x0:.2}" y1="{0:.2}" x2="{x1:.2}" y2="{0:.2}" stroke="gray" stroke-dasharray="6 4"/>"#,
            py(o)
        );
    }
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut band = String::new();
        for k in 0..c.grid.len() {
            let _ = write!(
                band,
                "{:.2},{:.2} ",
                px(c.grid[k]),
                py(c.mean[k] + c.sem[k])
            );
        }
        for k in (0..c.grid.len()).rev() {
            let _ = write!(
                band,
                "{:.2},{:.2} ",
                px(c.grid[k]),
                py(c.mean[k] - c.sem[k])
            );
        }
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.trim_end()
        );
        let line: Vec<String> = (0..c.grid.len())
            .map(|k| format!("{:.2},{:.2}", px(c.grid[k]), py(c.mean[k])))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
            line.join(" ")
        );
        let ly = TOP + 20.0 * i as f64 + 10.0;
        let lx = W - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&legend_entry(c))
        );
    }
    s.push_str("</svg>\n");
    s
}

fn legend_entry(c: &AggregateCurve) -> String {
    match c.m {
        Some(m) if c.label == c.algorithm.name() => format!("{} m={m}", c.label),
        _ => c.label.clone(),
    }
}

fn tick_label(x: f64) -> String {
    if x != 0.0 && (x.abs() >= 1e5 || x.abs() < 1e-2) {
        format!("{x:.1e}")
    } else if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.2}")
    }
}
