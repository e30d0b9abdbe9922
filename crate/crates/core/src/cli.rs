use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use davi_lab::analysis::{bound_report, check_epsilon_optimal, value_gap, BoundInputs};
use davi_lab::bellman::{bellman_residual, greedy_policy, optimal_value_oracle};
use davi_lab::generators::GeneratorSpec;
use davi_lab::harness::{emit_outputs, run_experiment, ExperimentConfig, HarnessError};
use davi_lab::solvers::{run, Algorithm, Budget, CostModel, RunConfig, Samplers, SolverError};
use davi_lab::{Mdp, Policy};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(
    name = "davi-lab",
    version,
    about = "Plan in finite MDPs with VI, asynchronous VI and DAVI"
)]
pub struct Cli {
    /// Print extra diagnostics to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a benchmark MDP from a generator spec and write it as JSON.
    Generate(GenerateArgs),
    /// Run one solver on an MDP file and write its trace.
    Solve(SolveArgs),
    /// Run a multi-seed experiment config and write CSV, SVG and manifest.
    Experiment(ExperimentArgs),
    /// Evaluate iteration and complexity bounds.
    Bounds(BoundsArgs),
    /// Check whether a policy is eps-optimal (exit 1 if not).
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator spec JSON, e.g. {"family": "tree", "seed": 1}.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output MDP file.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Overrides the seed in the spec.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AlgoArg {
    Vi,
    Avi,
    Davi,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Vi => Algorithm::Vi,
            AlgoArg::Avi => Algorithm::Avi,
            AlgoArg::Davi => Algorithm::Davi,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CostArg {
    Lookahead,
    Successor,
}

impl From<CostArg> for CostModel {
    fn from(c: CostArg) -> Self {
        match c {
            CostArg::Lookahead => CostModel::Lookahead,
            CostArg::Successor => CostModel::Successor,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum BudgetUnit {
    /// VI batches or AVI/DAVI iterations.
    #[default]
    Iterations,
    /// Cumulative cost units.
    Cost,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// MDP JSON file.
    #[arg(long, alias = "mdp", value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub algo: AlgoArg,
    /// Action-subset size (DAVI only).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub budget: u64,
    #[arg(long, value_enum, default_value_t = BudgetUnit::Iterations)]
    pub budget_unit: BudgetUnit,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = CostArg::Lookahead)]
    pub cost_model: CostArg,
    #[arg(long, default_value_t = 0)]
    pub track_state: usize,
    /// Directory for trace.csv and solution.json.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment config JSON.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides the config's base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to the config value, then every core).
    #[arg(long, env = "DAVI_LAB_THREADS")]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Take S, A and the discount from this MDP, use its exact ‖v*‖ as the
    /// distance bound and also print the value-gap report.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub eps: f64,
    #[arg(long)]
    pub delta: f64,
    #[arg(long = "states", short = 'S')]
    pub states: Option<usize>,
    #[arg(long = "actions", short = 'A')]
    pub actions: Option<usize>,
    /// Subset size; defaults to A.
    #[arg(long)]
    pub m: Option<usize>,
    /// ‖v0‖ used in the default distance bound 1/(1-gamma) + ‖v0‖.
    #[arg(long, default_value_t = 0.0)]
    pub v0_norm: f64,
    /// Explicit ‖v* - v0‖ (or an upper bound on it).
    #[arg(long)]
    pub dist: Option<f64>,
    /// Contractions targeted by the iteration bound; defaults to ceil(H).
    #[arg(long)]
    pub l: Option<u64>,
    /// Overrides the uniform q_min = m/(SA).
    #[arg(long)]
    pub q_min: Option<f64>,
    /// Overrides the uniform p_min = 1/S.
    #[arg(long)]
    pub p_min: Option<f64>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// MDP JSON file.
    #[arg(long, alias = "mdp", value_name = "PATH")]
    pub config: PathBuf,
    /// Policy JSON: an array of actions or a solution file with a "policy" field.
    #[arg(long, value_name = "PATH")]
    pub policy: PathBuf,
    #[arg(long)]
    pub eps: f64,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load_mdp(path: &Path) -> Result<Mdp, CliError> {
    Mdp::from_json(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Runs a parsed command; `Ok(code)` is 0, or 1 for a failed verification.
pub fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Solve(a) => solve(a),
        Command::Experiment(a) => experiment(a, cli.verbose),
        Command::Bounds(a) => bounds(a),
        Command::Verify(a) => verify(a),
    }
}

fn generate(a: GenerateArgs) -> Result<i32, CliError> {
    let mut spec = GeneratorSpec::from_json(&read(&a.config)?).map_err(usage)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(usage)?;
    let mdp = spec.generate().map_err(runtime)?;
    write(&a.out, &(mdp.to_json() + "\n"))?;
    let r = mdp.rewards();
    let (lo, hi) = r
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    let nonzero = r.iter().filter(|&&x| x != 0.0).count();
    println!("family: {}", spec.family_name());
    println!("S = {}", mdp.num_states());
    println!("A = {}", mdp.num_actions());
    println!("rewards: min {lo}, max {hi}, mean {mean}, nonzero {nonzero}");
    println!("wrote {}", a.out.display());
    Ok(0)
}

fn solve(a: SolveArgs) -> Result<i32, CliError> {
    let mdp = load_mdp(&a.config)?;
    let algorithm = Algorithm::from(a.algo);
    match (algorithm, a.m) {
        (Algorithm::Davi, None) => return Err(usage("--algo davi requires --m")),
        (Algorithm::Vi | Algorithm::Avi, Some(_)) => {
            return Err(usage("--m only applies to --algo davi"))
        }
        _ => {}
    }
    let samplers = Samplers::uniform(&mdp, a.m).map_err(usage)?;
    let budget = match a.budget_unit {
        BudgetUnit::Iterations => Budget::Iterations(a.budget),
        BudgetUnit::Cost => Budget::Cost(a.budget),
    };
    let config = RunConfig {
        cost_model: a.cost_model.into(),
        tracked_state: a.track_state,
        ..RunConfig::new(algorithm, budget, a.seed)
    };
    let trace = run(&mdp, &samplers, &config).map_err(|e| match e {
        SolverError::Sampler(_)
        | SolverError::TrackedState(_)
        | SolverError::MissingActionSampler => usage(e),
        other => runtime(other),
    })?;

    let mut csv = Vec::new();
    trace.write_csv(&mut csv).map_err(runtime)?;
    let trace_path = a.out.join("trace.csv");
    write(&trace_path, &String::from_utf8(csv).expect("CSV is UTF-8"))?;
    println!("wrote {}", trace_path.display());
    match trace.solution() {
        Some(mut sol) => {
            // VI and AVI keep no policy; report the greedy one
            if sol.policy.is_none() {
                sol.policy = Some(
                    greedy_policy(&mdp, &trace.final_values)
                        .map_err(runtime)?
                        .into_vec(),
                );
            }
            let path = a.out.join("solution.json");
            let mut text = serde_json::to_string_pretty(&sol).map_err(runtime)?;
            text.push('\n');
            write(&path, &text)?;
            println!("wrote {}", path.display());
        }
        None => println!(
            "solution sidecar skipped: more than {} states",
            davi_lab::solvers::SIDECAR_MAX_STATES
        ),
    }
    let residual = bellman_residual(&mdp, &trace.final_values).map_err(runtime)?;
    println!(
        "iterations: {}",
        trace.checkpoints.last().map_or(0, |c| c.iteration)
    );
    println!("cost: {}", trace.final_cost());
    println!("residual: {residual:e}");
    Ok(0)
}

fn experiment(a: ExperimentArgs, verbose: bool) -> Result<i32, CliError> {
    let mut cfg = ExperimentConfig::load(&a.config).map_err(usage)?;
    if let Some(out) = a.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = a.seed {
        cfg.base_seed = seed;
    }
    if a.workers.is_some() {
        cfg.workers = a.workers;
    }
    cfg.validate().map_err(usage)?;
    let result = run_experiment(&cfg).map_err(|e| match e {
        HarnessError::Config(_) => usage(e),
        other => runtime(other),
    })?;
    if verbose {
        for c in &result.curves {
            eprintln!(
                "{} (m={}): final mean {} ± {}",
                c.label,
                c.m.map_or("-".to_string(), |m| m.to_string()),
                c.mean.last().unwrap_or(&f64::NAN),
                c.sem.last().unwrap_or(&f64::NAN)
            );
        }
    }
    let paths = emit_outputs(&result, &cfg.output_dir).map_err(runtime)?;
    println!("{}", paths.csv.display());
    println!("{}", paths.svg.display());
    println!("{}", paths.manifest.display());
    Ok(0)
}

fn bounds(a: BoundsArgs) -> Result<i32, CliError> {
    let mdp = a.config.as_deref().map(load_mdp).transpose()?;
    let pick = |flag: Option<usize>, from_mdp: Option<usize>, name: &str| {
        flag.or(from_mdp)
            .ok_or_else(|| usage(format!("--{name} is required without --config")))
    };
    let states = pick(a.states, mdp.as_ref().map(Mdp::num_states), "states")?;
    let actions = pick(a.actions, mdp.as_ref().map(Mdp::num_actions), "actions")?;
    let gamma = a
        .gamma
        .or(mdp.as_ref().map(Mdp::discount))
        .ok_or_else(|| usage("--gamma is required without --config"))?;
    let m = a.m.unwrap_or(actions);
    if states == 0 || actions == 0 || m == 0 || m > actions {
        return Err(usage(format!(
            "need S >= 1, A >= 1 and 1 <= m <= A (got S={states}, A={actions}, m={m})"
        )));
    }

    let mut gap = None;
    let mut oracle_dist = None;
    if let Some(mdp) = &mdp {
        let (v_star, _) = optimal_value_oracle(mdp, 1e-12).map_err(runtime)?;
        oracle_dist = Some(v_star.max_norm() + a.v0_norm);
        gap = Some(value_gap(mdp, &v_star).map_err(runtime)?);
    }
    let mut inputs = BoundInputs::uniform(gamma, a.eps, a.delta, a.v0_norm, states, actions, m);
    inputs.dist_bound = a.dist.or(oracle_dist).unwrap_or(inputs.dist_bound);
    if let Some(q) = a.q_min {
        inputs.q_min = q;
    }
    if let Some(p) = a.p_min {
        inputs.p_min = p;
    }
    let report = bound_report(&inputs, a.l).map_err(usage)?;

    if a.json {
        let value = serde_json::json!({ "bounds": report, "gap": gap });
        println!("{}", serde_json::to_string_pretty(&value).map_err(runtime)?);
    } else {
        print!("{}", report.to_table());
        if let Some(note) = &report.table.vi_note {
            println!("VI row: {note}");
        }
        if let Some(g) = &gap {
            match (g.global, g.capture_radius) {
                (Some(d), Some(r)) => println!("value gap {d}, capture radius {r}"),
                _ => println!(
                    "value gap undefined: {}",
                    g.note.as_deref().unwrap_or("all actions tie")
                ),
            }
        }
        println!("magnitudes omit constant factors");
    }
    Ok(0)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PolicyFile {
    Plain(Vec<usize>),
    Solution { policy: Vec<usize> },
}

fn verify(a: VerifyArgs) -> Result<i32, CliError> {
    let mdp = load_mdp(&a.config)?;
    let text = read(&a.policy)?;
    let policy = match serde_json::from_str::<PolicyFile>(&text) {
        Ok(PolicyFile::Plain(p)) | Ok(PolicyFile::Solution { policy: p }) => Policy::new(p),
        Err(e) => return Err(usage(format!("{}: {e}", a.policy.display()))),
    };
    mdp.check_policy(&policy).map_err(usage)?;
    if !(a.eps >= 0.0 && a.eps.is_finite()) {
        return Err(usage(format!(
            "--eps {} must be a finite non-negative number",
            a.eps
        )));
    }
    let check = check_epsilon_optimal(&mdp, &policy, a.eps).map_err(runtime)?;
    println!(
        "{}: min slack {} at state {} (max shortfall {})",
        if check.optimal {
            "eps-optimal"
        } else {
            "NOT eps-optimal"
        },
        check.min_slack,
        check.worst_state,
        check.shortfall
    );
    if !check.optimal {
        for (s, x) in check.slack.iter().enumerate().filter(|(_, x)| **x < 0.0) {
            println!("state {s}: v*(s) - v_pi(s) = {}, slack {x}", a.eps - x);
        }
    }
    Ok(if check.optimal { 0 } else { 1 })
}
