//! VI, asynchronous VI and DAVI as steppable solvers with cost accounting.
//!
//! Every step charges the [`CostModel`] for each distinct look-ahead it
//! evaluates. A [`RunTrace`] records `(iteration, cost, tracked value)` after
//! every VI batch or AVI/DAVI iteration.

use std::fmt;
use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bellman::{backup_unchecked, lookahead_unchecked};
use crate::mdp::{Mdp, MdpError, Policy, ValueFunction};
use crate::samplers::{
    seeded_rng, ActionSubsetSampler, SamplerError, SolverRng, StateSampler, SubsetBuffer,
};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("DAVI needs an action-subset sampler (set m)")]
    MissingActionSampler,
    #[error("DAVI state has no policy")]
    MissingPolicy,
    #[error("invalid initialization: {0}")]
    InvalidInit(String),
    #[error("tracked state {0} out of range")]
    TrackedState(usize),
    #[error("checkpoint thinning must be at least 1")]
    Thinning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Vi,
    Avi,
    Davi,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Vi => "vi",
            Algorithm::Avi => "avi",
            Algorithm::Davi => "davi",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What one look-ahead evaluation costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostModel {
    /// One unit per look-ahead.
    #[default]
    Lookahead,
    /// `1 + |successors(s, a)|` units per look-ahead.
    Successor,
}

impl CostModel {
    #[inline]
    pub fn charge(self, mdp: &Mdp, s: usize, a: usize) -> u64 {
        match self {
            CostModel::Lookahead => 1,
            CostModel::Successor => 1 + mdp.successors(s, a).len() as u64,
        }
    }

    fn full_state(self, mdp: &Mdp, s: usize) -> u64 {
        match self {
            CostModel::Lookahead => mdp.num_actions() as u64,
            CostModel::Successor => (0..mdp.num_actions()).map(|a| self.charge(mdp, s, a)).sum(),
        }
    }
}

/// Initial value function (and DAVI policy).
///
/// `Zero` and `ConstantNegative` start from the all-zeros policy.
/// `Explicit` must satisfy `v0(s) ≤ L^{v0}(s, π0(s))` for every state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitSpec {
    #[default]
    Zero,
    ConstantNegative {
        c: f64,
    },
    Explicit {
        values: Vec<f64>,
        policy: Vec<usize>,
    },
}

impl InitSpec {
    pub fn initialize(&self, mdp: &Mdp) -> Result<(ValueFunction, Policy), SolverError> {
        let n = mdp.num_states();
        match self {
            InitSpec::Zero => Ok((ValueFunction::zeros(n), Policy::constant(n, 0))),
            InitSpec::ConstantNegative { c } => {
                if !(c.is_finite() && *c > 0.0) {
                    return Err(SolverError::InvalidInit(format!(
                        "c = {c} must be positive"
                    )));
                }
                Ok((ValueFunction::constant(n, -c), Policy::constant(n, 0)))
            }
            InitSpec::Explicit { values, policy } => {
                let v = ValueFunction::new(values.clone())?;
                let pi = Policy::new(policy.clone());
                mdp.check_values(&v)?;
                mdp.check_policy(&pi)?;
                for s in 0..n {
                    let q = lookahead_unchecked(mdp, v.as_slice(), s, pi[s]);
                    if v[s] > q {
                        return Err(SolverError::InvalidInit(format!(
                            "v0({s}) = {} exceeds L(s, π0(s)) = {q}",
                            v[s]
                        )));
                    }
                }
                Ok((v, pi))
            }
        }
    }
}

/// Value iterate, DAVI policy, iteration counter and cumulative cost.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub values: ValueFunction,
    /// Best-so-far actions; only DAVI keeps one.
    pub policy: Option<Policy>,
    pub iteration: u64,
    pub cost: u64,
}

impl SolverState {
    pub fn new(values: ValueFunction, policy: Option<Policy>) -> Self {
        Self {
            values,
            policy,
            iteration: 0,
            cost: 0,
        }
    }
}

/// One synchronous batch `v ← T v`; every update reads the old `v`.
pub fn vi_batch(mdp: &Mdp, state: &mut SolverState, cost: CostModel) {
    let old = state.values.as_slice();
    let next: Vec<f64> = (0..mdp.num_states())
        .map(|s| backup_unchecked(mdp, old, s).0)
        .collect();
    state.cost += (0..mdp.num_states())
        .map(|s| cost.full_state(mdp, s))
        .sum::<u64>();
    state.values = ValueFunction::new_unchecked(next);
    state.iteration += 1;
}

/// In-place full back-up of state `s`.
pub fn avi_update(mdp: &Mdp, state: &mut SolverState, s: usize, cost: CostModel) {
    let (value, _) = backup_unchecked(mdp, state.values.as_slice(), s);
    state.values.as_mut_slice()[s] = value;
    state.cost += cost.full_state(mdp, s);
    state.iteration += 1;
}

/// Samples a state from `states` and backs it up in place. Returns the state.
pub fn avi_step<R: Rng + ?Sized>(
    mdp: &Mdp,
    state: &mut SolverState,
    states: &StateSampler,
    cost: CostModel,
    rng: &mut R,
) -> usize {
    let s = states.sample(rng);
    avi_update(mdp, state, s, cost);
    s
}

/// What a DAVI update did at its sampled state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DaviUpdate {
    pub state: usize,
    /// Best sampled action (ties broken uniformly at random).
    pub best_sampled: usize,
    pub best_sampled_value: f64,
    pub policy_value: f64,
    pub policy_changed: bool,
}

/// DAVI value back-up and policy improvement at `s` with sampled `subset`.
///
/// `v(s) ← max{L(s, a*), L(s, π(s))}` and `π(s) ← a*` only on strict
/// improvement. The look-ahead of `π(s)` is computed (and charged) once
/// when it is already in the subset.
pub fn davi_update<R: Rng + ?Sized>(
    mdp: &Mdp,
    state: &mut SolverState,
    s: usize,
    subset: &[usize],
    cost: CostModel,
    rng: &mut R,
) -> Result<DaviUpdate, SolverError> {
    let policy = state.policy.as_mut().ok_or(SolverError::MissingPolicy)?;
    let incumbent = policy[s];
    let v = state.values.as_slice();

    let mut best_action = usize::MAX;
    let mut best_value = f64::NEG_INFINITY;
    let mut ties = 0u32;
    let mut incumbent_value = None;
    let mut charged = 0;
    for &a in subset {
        let q = lookahead_unchecked(mdp, v, s, a);
        charged += cost.charge(mdp, s, a);
        if a == incumbent {
            incumbent_value = Some(q);
        }
        if q > best_value {
            best_value = q;
            best_action = a;
            ties = 1;
        } else if q == best_value {
            // reservoir pick: uniform over all maximizers seen so far
            ties += 1;
            if rng.random_range(0..ties) == 0 {
                best_action = a;
            }
        }
    }
    let incumbent_value = match incumbent_value {
        Some(q) => q,
        None => {
            charged += cost.charge(mdp, s, incumbent);
            lookahead_unchecked(mdp, v, s, incumbent)
        }
    };

    let improved = best_value > incumbent_value;
    state.values.as_mut_slice()[s] = best_value.max(incumbent_value);
    if improved {
        policy.set(s, best_action);
    }
    state.cost += charged;
    state.iteration += 1;
    Ok(DaviUpdate {
        state: s,
        best_sampled: best_action,
        best_sampled_value: best_value,
        policy_value: incumbent_value,
        policy_changed: improved,
    })
}

/// Samples `s ~ p`, `A_n ~ q(· | s)` and applies [`davi_update`].
#[allow(clippy::too_many_arguments)]
pub fn davi_step<R: Rng + ?Sized>(
    mdp: &Mdp,
    state: &mut SolverState,
    states: &StateSampler,
    actions: &ActionSubsetSampler,
    cost: CostModel,
    rng: &mut R,
    buf: &mut SubsetBuffer,
) -> Result<DaviUpdate, SolverError> {
    let s = states.sample(rng);
    let subset = actions.sample_into(s, rng, buf);
    davi_update(mdp, state, s, subset, cost, rng)
}

/// State distribution `p` and, for DAVI, subset distribution `q`.
#[derive(Debug, Clone)]
pub struct Samplers {
    pub states: StateSampler,
    pub actions: Option<ActionSubsetSampler>,
}

impl Samplers {
    /// Uniform states; uniform m-subsets when `m` is given.
    pub fn uniform(mdp: &Mdp, m: Option<usize>) -> Result<Self, SolverError> {
        let actions = m
            .map(|m| ActionSubsetSampler::uniform(mdp.num_actions(), m))
            .transpose()?;
        Ok(Self {
            states: StateSampler::uniform(mdp.num_states()),
            actions,
        })
    }

    fn check(&self, mdp: &Mdp, algorithm: Algorithm) -> Result<(), SolverError> {
        if self.states.num_states() != mdp.num_states() {
            return Err(SamplerError::Mismatch {
                what: "states",
                expected: mdp.num_states(),
                got: self.states.num_states(),
            }
            .into());
        }
        match (&self.actions, algorithm) {
            (None, Algorithm::Davi) => Err(SolverError::MissingActionSampler),
            (Some(a), _) => Ok(a.check_against(mdp)?),
            (None, _) => Ok(()),
        }
    }
}

/// A single seeded solver run that can be advanced one step at a time.
pub struct Solver<'a> {
    mdp: &'a Mdp,
    samplers: &'a Samplers,
    algorithm: Algorithm,
    cost_model: CostModel,
    state: SolverState,
    rng: SolverRng,
    buf: SubsetBuffer,
}

impl<'a> Solver<'a> {
    pub fn new(
        mdp: &'a Mdp,
        samplers: &'a Samplers,
        algorithm: Algorithm,
        init: &InitSpec,
        cost_model: CostModel,
        rng: SolverRng,
    ) -> Result<Self, SolverError> {
        samplers.check(mdp, algorithm)?;
        let (values, policy) = init.initialize(mdp)?;
        let policy = (algorithm == Algorithm::Davi).then_some(policy);
        Ok(Self {
            mdp,
            samplers,
            algorithm,
            cost_model,
            state: SolverState::new(values, policy),
            rng,
            buf: SubsetBuffer::default(),
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn into_state(self) -> SolverState {
        self.state
    }

    /// One VI batch or one AVI/DAVI iteration.
    pub fn step(&mut self) {
        let mdp = self.mdp;
        match self.algorithm {
            Algorithm::Vi => vi_batch(mdp, &mut self.state, self.cost_model),
            Algorithm::Avi => {
                avi_step(
                    mdp,
                    &mut self.state,
                    &self.samplers.states,
                    self.cost_model,
                    &mut self.rng,
                );
            }
            Algorithm::Davi => {
                let actions = self
                    .samplers
                    .actions
                    .as_ref()
                    .expect("checked in Solver::new");
                davi_step(
                    mdp,
                    &mut self.state,
                    &self.samplers.states,
                    actions,
                    self.cost_model,
                    &mut self.rng,
                    &mut self.buf,
                )
                .expect("DAVI solver always carries a policy");
            }
        }
    }
}

/// When a run stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Budget {
    /// Exactly this many VI batches / AVI or DAVI iterations.
    Iterations(u64),
    /// Keep stepping while cumulative cost is below this; the last step may
    /// overshoot.
    Cost(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub init: InitSpec,
    pub cost_model: CostModel,
    pub budget: Budget,
    pub tracked_state: usize,
    pub seed: u64,
    /// Generator stream; lets several runs share a seed independently.
    pub stream: u64,
    /// Record every k-th iteration (the last one is always kept).
    pub thinning: u64,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, budget: Budget, seed: u64) -> Self {
        Self {
            algorithm,
            init: InitSpec::Zero,
            cost_model: CostModel::Lookahead,
            budget,
            tracked_state: 0,
            seed,
            stream: 1,
            thinning: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: u64,
    pub cost: u64,
    pub value: f64,
}

/// Output of [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub tracked_state: usize,
    /// Strictly increasing in cost; the first is the initial point.
    pub checkpoints: Vec<Checkpoint>,
    pub final_values: ValueFunction,
    pub final_policy: Option<Policy>,
}

/// Largest state count for which a solution sidecar is written.
pub const SIDECAR_MAX_STATES: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<Vec<usize>>,
}

impl RunTrace {
    /// Tracked value at the largest checkpoint cost `≤ cost`.
    pub fn value_at_cost(&self, cost: f64) -> f64 {
        let idx = self.checkpoints.partition_point(|c| c.cost as f64 <= cost);
        self.checkpoints[idx.saturating_sub(1)].value
    }

    pub fn final_cost(&self) -> u64 {
        self.checkpoints.last().map_or(0, |c| c.cost)
    }

    /// CSV with header `algorithm,seed,iteration,cost,tracked_value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "algorithm,seed,iteration,cost,tracked_value")?;
        for c in &self.checkpoints {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.algorithm, self.seed, c.iteration, c.cost, c.value
            )?;
        }
        Ok(())
    }

    /// Final `v` and `π`, for MDPs up to [`SIDECAR_MAX_STATES`] states.
    pub fn solution(&self) -> Option<Solution> {
        (self.final_values.len() <= SIDECAR_MAX_STATES).then(|| Solution {
            algorithm: self.algorithm,
            seed: self.seed,
            values: self.final_values.as_slice().to_vec(),
            policy: self.final_policy.as_ref().map(|p| p.as_slice().to_vec()),
        })
    }
}

/// Runs one algorithm until the budget is spent.
pub fn run(mdp: &Mdp, samplers: &Samplers, config: &RunConfig) -> Result<RunTrace, SolverError> {
    if config.tracked_state >= mdp.num_states() {
        return Err(SolverError::TrackedState(config.tracked_state));
    }
    if config.thinning == 0 {
        return Err(SolverError::Thinning);
    }
    let rng = seeded_rng(config.seed, config.stream);
    let mut solver = Solver::new(
        mdp,
        samplers,
        config.algorithm,
        &config.init,
        config.cost_model,
        rng,
    )?;
    let tracked = config.tracked_state;
    let snapshot = |st: &SolverState| Checkpoint {
        iteration: st.iteration,
        cost: st.cost,
        value: st.values[tracked],
    };
    let mut checkpoints = vec![snapshot(solver.state())];
    let more = |st: &SolverState| match config.budget {
        Budget::Iterations(n) => st.iteration < n,
        Budget::Cost(c) => st.cost < c,
    };
    while more(solver.state()) {
        solver.step();
        let st = solver.state();
        if st.iteration % config.thinning == 0 || !more(st) {
            checkpoints.push(snapshot(st));
        }
    }
    let state = solver.into_state();
    Ok(RunTrace {
        algorithm: config.algorithm,
        seed: config.seed,
        tracked_state: tracked,
        checkpoints,
        final_values: state.values,
        final_policy: state.policy,
    })
}
