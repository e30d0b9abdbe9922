//! Explicit finite MDPs with sparse transitions.
//!
//! Termination is not an absorbing state: every `(s, a)` pair lists its
//! successors with positive probabilities, and whatever mass is missing from
//! `1 - sum(p)` ends the episode with value 0.

use std::ops::Index;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed above 1 when summing a successor list.
pub const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("MDP must have at least one state and one action (got S={states}, A={actions})")]
    Empty { states: usize, actions: usize },
    #[error("expected {expected} {what}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("discount {0} outside [0, 1]")]
    Discount(f64),
    #[error("discount 1 requires an episodic MDP")]
    NotEpisodic,
    #[error("non-finite reward at ({state}, {action})")]
    Reward { state: usize, action: usize },
    #[error("bad transition at ({state}, {action}): {reason}")]
    Transition {
        state: usize,
        action: usize,
        reason: String,
    },
    #[error("state index {0} out of range")]
    StateOutOfRange(usize),
    #[error("action index {0} out of range")]
    ActionOutOfRange(usize),
    #[error("value function has length {got}, MDP has {expected} states")]
    ValueLength { expected: usize, got: usize },
    #[error("policy has length {got}, MDP has {expected} states")]
    PolicyLength { expected: usize, got: usize },
    #[error("non-finite value at state {0}")]
    NonFiniteValue(usize),
    #[error("iteration did not converge after {sweeps} sweeps (residual {residual:e})")]
    NoConvergence { sweeps: u64, residual: f64 },
    #[error("tolerance must be positive and finite, got {0}")]
    Tolerance(f64),
    #[error("malformed MDP document: {0}")]
    Json(String),
}

/// Dense vector of state values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValueFunction(Vec<f64>);

impl ValueFunction {
    pub fn new(values: Vec<f64>) -> Result<Self, MdpError> {
        if let Some(s) = values.iter().position(|v| !v.is_finite()) {
            return Err(MdpError::NonFiniteValue(s));
        }
        Ok(Self(values))
    }

    pub(crate) fn new_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    pub fn zeros(num_states: usize) -> Self {
        Self(vec![0.0; num_states])
    }

    pub fn constant(num_states: usize, c: f64) -> Self {
        Self(vec![c; num_states])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn max_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `‖self − other‖_∞`.
    pub fn distance(&self, other: &ValueFunction) -> f64 {
        assert_eq!(self.len(), other.len(), "value function lengths differ");
        self.0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Index<usize> for ValueFunction {
    type Output = f64;

    fn index(&self, s: usize) -> &f64 {
        &self.0[s]
    }
}

/// Deterministic Markov policy: one action index per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy(Vec<usize>);

impl Policy {
    pub fn new(actions: Vec<usize>) -> Self {
        Self(actions)
    }

    /// Every state takes action `a`.
    pub fn constant(num_states: usize, a: usize) -> Self {
        Self(vec![a; num_states])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn set(&mut self, s: usize, a: usize) {
        self.0[s] = a;
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

impl Index<usize> for Policy {
    type Output = usize;

    fn index(&self, s: usize) -> &usize {
        &self.0[s]
    }
}

/// A finite MDP with a uniform action count per state.
///
/// Immutable once built; `Mdp::new` checks every structural invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    /// Row-major `[s * A + a]`.
    rewards: Vec<f64>,
    /// Row-major `[s * A + a]`, each a list of `(successor, probability)`.
    transitions: Vec<Vec<(usize, f64)>>,
    discount: f64,
    bounded01: bool,
    episodic: bool,
}

impl Mdp {
    /// Builds and validates an MDP from nested per-state tables.
    pub fn new(
        rewards: Vec<Vec<f64>>,
        transitions: Vec<Vec<Vec<(usize, f64)>>>,
        discount: f64,
        episodic: bool,
    ) -> Result<Self, MdpError> {
        let num_states = rewards.len();
        let num_actions = rewards.first().map_or(0, Vec::len);
        if num_states == 0 || num_actions == 0 {
            return Err(MdpError::Empty {
                states: num_states,
                actions: num_actions,
            });
        }
        if transitions.len() != num_states {
            return Err(MdpError::Shape {
                what: "transition rows",
                expected: num_states,
                got: transitions.len(),
            });
        }
        let mut flat_rewards = Vec::with_capacity(num_states * num_actions);
        for row in rewards {
            if row.len() != num_actions {
                return Err(MdpError::Shape {
                    what: "rewards per state",
                    expected: num_actions,
                    got: row.len(),
                });
            }
            flat_rewards.extend(row);
        }
        let mut flat_transitions = Vec::with_capacity(num_states * num_actions);
        for row in transitions {
            if row.len() != num_actions {
                return Err(MdpError::Shape {
                    what: "transition lists per state",
                    expected: num_actions,
                    got: row.len(),
                });
            }
            flat_transitions.extend(row);
        }
        Self::from_flat(
            num_states,
            num_actions,
            flat_rewards,
            flat_transitions,
            discount,
            episodic,
        )
    }

    /// Builds from row-major `[s * A + a]` tables.
    pub fn from_flat(
        num_states: usize,
        num_actions: usize,
        rewards: Vec<f64>,
        transitions: Vec<Vec<(usize, f64)>>,
        discount: f64,
        episodic: bool,
    ) -> Result<Self, MdpError> {
        if num_states == 0 || num_actions == 0 {
            return Err(MdpError::Empty {
                states: num_states,
                actions: num_actions,
            });
        }
        let pairs = num_states * num_actions;
        if rewards.len() != pairs {
            return Err(MdpError::Shape {
                what: "rewards",
                expected: pairs,
                got: rewards.len(),
            });
        }
        if transitions.len() != pairs {
            return Err(MdpError::Shape {
                what: "transition lists",
                expected: pairs,
                got: transitions.len(),
            });
        }
        if !(0.0..=1.0).contains(&discount) {
            return Err(MdpError::Discount(discount));
        }
        if discount >= 1.0 && !episodic {
            return Err(MdpError::NotEpisodic);
        }

        let mut seen = vec![usize::MAX; num_states];
        for (idx, (r, succ)) in rewards.iter().zip(&transitions).enumerate() {
            let (state, action) = (idx / num_actions, idx % num_actions);
            if !r.is_finite() {
                return Err(MdpError::Reward { state, action });
            }
            let bad = |reason: String| MdpError::Transition {
                state,
                action,
                reason,
            };
            let mut total = 0.0;
            for &(next, p) in succ {
                if next >= num_states {
                    return Err(bad(format!("successor {next} out of range")));
                }
                if !(p > 0.0 && p.is_finite()) {
                    return Err(bad(format!("probability {p} is not positive")));
                }
                if seen[next] == idx {
                    return Err(bad(format!("successor {next} listed twice")));
                }
                seen[next] = idx;
                total += p;
            }
            if total > 1.0 + PROB_SUM_TOL {
                return Err(bad(format!("probabilities sum to {total}")));
            }
        }

        let bounded01 = rewards.iter().all(|r| (0.0..=1.0).contains(r));
        Ok(Self {
            num_states,
            num_actions,
            rewards,
            transitions,
            discount,
            bounded01,
            episodic,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// True iff every reward lies in `[0, 1]`.
    pub fn bounded01(&self) -> bool {
        self.bounded01
    }

    pub fn episodic(&self) -> bool {
        self.episodic
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.num_actions + a]
    }

    /// Probability of terminating after taking `a` in `s`.
    pub fn termination_prob(&self, s: usize, a: usize) -> f64 {
        let mass: f64 = self.successors(s, a).iter().map(|&(_, p)| p).sum();
        (1.0 - mass).max(0.0)
    }

    pub fn check_state(&self, s: usize) -> Result<(), MdpError> {
        if s < self.num_states {
            Ok(())
        } else {
            Err(MdpError::StateOutOfRange(s))
        }
    }

    pub fn check_action(&self, a: usize) -> Result<(), MdpError> {
        if a < self.num_actions {
            Ok(())
        } else {
            Err(MdpError::ActionOutOfRange(a))
        }
    }

    pub fn check_values(&self, v: &ValueFunction) -> Result<(), MdpError> {
        if v.len() == self.num_states {
            Ok(())
        } else {
            Err(MdpError::ValueLength {
                expected: self.num_states,
                got: v.len(),
            })
        }
    }

    pub fn check_policy(&self, pi: &Policy) -> Result<(), MdpError> {
        if pi.len() != self.num_states {
            return Err(MdpError::PolicyLength {
                expected: self.num_states,
                got: pi.len(),
            });
        }
        pi.as_slice().iter().try_for_each(|&a| self.check_action(a))
    }

    /// States in an order where every successor comes after its
    /// predecessors, or `None` if the transition graph has a cycle
    /// (self-loops included).
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indegree = vec![0usize; self.num_states];
        for succ in &self.transitions {
            for &(next, _) in succ {
                indegree[next] += 1;
            }
        }
        let mut order: Vec<usize> = (0..self.num_states).filter(|&s| indegree[s] == 0).collect();
        let mut head = 0;
        while head < order.len() {
            let s = order[head];
            head += 1;
            for a in 0..self.num_actions {
                for &(next, _) in self.successors(s, a) {
                    indegree[next] -= 1;
                    if indegree[next] == 0 {
                        order.push(next);
                    }
                }
            }
        }
        (order.len() == self.num_states).then_some(order)
    }

    pub fn to_document(&self) -> MdpDocument {
        MdpDocument {
            num_states: self.num_states,
            num_actions: self.num_actions,
            discount: self.discount,
            episodic: self.episodic,
            rewards: self
                .rewards
                .chunks(self.num_actions)
                .map(<[f64]>::to_vec)
                .collect(),
            transitions: self
                .transitions
                .chunks(self.num_actions)
                .map(<[_]>::to_vec)
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("MDP document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MdpError> {
        let doc: MdpDocument =
            serde_json::from_str(text).map_err(|e| MdpError::Json(e.to_string()))?;
        Mdp::try_from(doc)
    }
}

/// On-disk JSON layout of an MDP.
///
/// `transitions[s][a]` is a list of `[successor, probability]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub num_states: usize,
    pub num_actions: usize,
    pub discount: f64,
    pub episodic: bool,
    pub rewards: Vec<Vec<f64>>,
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
}

impl TryFrom<MdpDocument> for Mdp {
    type Error = MdpError;

    fn try_from(doc: MdpDocument) -> Result<Self, MdpError> {
        if doc.rewards.len() != doc.num_states {
            return Err(MdpError::Shape {
                what: "reward rows",
                expected: doc.num_states,
                got: doc.rewards.len(),
            });
        }
        let mdp = Mdp::new(doc.rewards, doc.transitions, doc.discount, doc.episodic)?;
        if mdp.num_actions != doc.num_actions {
            return Err(MdpError::Shape {
                what: "actions per state",
                expected: doc.num_actions,
                got: mdp.num_actions,
            });
        }
        Ok(mdp)
    }
}
