//! State and action-subset sampling distributions.
//!
//! [`joint_inclusion`] gives `q̃(s, a)`, the probability that one iteration
//! draws state `s` *and* includes action `a` in the sampled subset, along
//! with its minimum `q_min` and the state minimum `p_min`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::Mdp;

/// The generator used for every seeded stream in the crate.
pub type SolverRng = ChaCha8Rng;

/// Independent stream `stream` of the generator seeded by `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> SolverRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("state distribution is empty")]
    Empty,
    #[error("state probability {value} at index {index} is negative or non-finite")]
    BadProbability { index: usize, value: f64 },
    #[error("state probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("subset size m={m} must be in [1, {actions}]")]
    SubsetSize { m: usize, actions: usize },
    #[error("weight row {row}: {reason}")]
    BadWeights { row: usize, reason: String },
    #[error("state {0} has zero sampling probability")]
    ZeroProbabilityState(usize),
    #[error("pair ({state}, {action}) is never sampled")]
    ZeroInclusion { state: usize, action: usize },
    #[error("sampler built for {got} {what}, MDP has {expected}")]
    Mismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Distribution `p` over states.
#[derive(Debug, Clone)]
pub struct StateSampler {
    probs: Vec<f64>,
    table: Option<WeightedIndex<f64>>,
}

impl StateSampler {
    pub fn uniform(num_states: usize) -> Self {
        assert!(num_states > 0, "uniform sampler over zero states");
        Self {
            probs: vec![1.0 / num_states as f64; num_states],
            table: None,
        }
    }

    pub fn from_probabilities(probs: Vec<f64>) -> Result<Self, SamplerError> {
        if probs.is_empty() {
            return Err(SamplerError::Empty);
        }
        if let Some((index, &value)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p >= 0.0))
        {
            return Err(SamplerError::BadProbability { index, value });
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(SamplerError::NotNormalized(total));
        }
        let table = WeightedIndex::new(&probs).map_err(|_| SamplerError::NotNormalized(total))?;
        Ok(Self {
            probs,
            table: Some(table),
        })
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn is_uniform(&self) -> bool {
        self.table.is_none()
    }

    /// Every state has positive probability.
    pub fn covers_all_states(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    pub fn p_min(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.table {
            None => rng.random_range(0..self.probs.len()),
            Some(table) => table.sample(rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetMode {
    /// Every m-subset equally likely.
    Uniform,
    /// Successive draws proportional to weight, renormalized after each pick.
    Weighted,
}

/// Distribution `q(· | s)` over m-subsets of distinct actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSubsetSampler {
    num_actions: usize,
    m: usize,
    /// One row shared by all states, or one row per state.
    weights: Option<Vec<Vec<f64>>>,
}

/// Per-run scratch space for subset draws.
#[derive(Debug, Clone, Default)]
pub struct SubsetBuffer {
    perm: Vec<usize>,
    remaining: Vec<f64>,
    out: Vec<usize>,
}

impl ActionSubsetSampler {
    pub fn uniform(num_actions: usize, m: usize) -> Result<Self, SamplerError> {
        check_m(num_actions, m)?;
        Ok(Self {
            num_actions,
            m,
            weights: None,
        })
    }

    pub fn weighted(weights: Vec<Vec<f64>>, m: usize) -> Result<Self, SamplerError> {
        let num_actions = weights.first().map_or(0, Vec::len);
        check_m(num_actions, m)?;
        for (row, w) in weights.iter().enumerate() {
            let bad = |reason: String| SamplerError::BadWeights { row, reason };
            if w.len() != num_actions {
                return Err(bad(format!(
                    "has {} entries, expected {num_actions}",
                    w.len()
                )));
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(bad("weights must be finite and non-negative".into()));
            }
            let positive = w.iter().filter(|&&x| x > 0.0).count();
            if positive < m {
                return Err(bad(format!("only {positive} positive weights for m={m}")));
            }
        }
        Ok(Self {
            num_actions,
            m,
            weights: Some(weights),
        })
    }

    pub fn mode(&self) -> SubsetMode {
        if self.weights.is_some() {
            SubsetMode::Weighted
        } else {
            SubsetMode::Uniform
        }
    }

    pub fn subset_size(&self) -> usize {
        self.m
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Checks that this sampler fits `mdp` (action count, weight rows).
    pub fn check_against(&self, mdp: &Mdp) -> Result<(), SamplerError> {
        if self.num_actions != mdp.num_actions() {
            return Err(SamplerError::Mismatch {
                what: "actions",
                expected: mdp.num_actions(),
                got: self.num_actions,
            });
        }
        if let Some(w) = &self.weights {
            if w.len() != 1 && w.len() != mdp.num_states() {
                return Err(SamplerError::Mismatch {
                    what: "weight rows",
                    expected: mdp.num_states(),
                    got: w.len(),
                });
            }
        }
        Ok(())
    }

    fn weight_row(&self, s: usize) -> Option<&[f64]> {
        self.weights
            .as_ref()
            .map(|w| if w.len() == 1 { &w[0][..] } else { &w[s][..] })
    }

    /// Exact marginal inclusion probability in uniform mode.
    pub fn uniform_inclusion(&self) -> Option<f64> {
        self.weights
            .is_none()
            .then(|| self.m as f64 / self.num_actions as f64)
    }

    /// Draws a subset for state `s` into `buf` and returns it.
    pub fn sample_into<'b, R: Rng + ?Sized>(
        &self,
        s: usize,
        rng: &mut R,
        buf: &'b mut SubsetBuffer,
    ) -> &'b [usize] {
        buf.out.clear();
        match self.weight_row(s) {
            None => {
                if buf.perm.len() != self.num_actions {
                    buf.perm = (0..self.num_actions).collect();
                }
                // Partial Fisher-Yates. The permutation is left scrambled between
                // calls; each pick is still uniform over the unpicked actions.
                for i in 0..self.m {
                    let j = rng.random_range(i..self.num_actions);
                    buf.perm.swap(i, j);
                }
                buf.out.extend_from_slice(&buf.perm[..self.m]);
            }
            Some(row) => {
                buf.remaining.clear();
                buf.remaining.extend_from_slice(row);
                let mut total: f64 = buf.remaining.iter().sum();
                for _ in 0..self.m {
                    let target = rng.random::<f64>() * total;
                    let mut acc = 0.0;
                    let mut pick = None;
                    for (a, &w) in buf.remaining.iter().enumerate() {
                        if w > 0.0 {
                            acc += w;
                            pick = Some(a);
                            if target < acc {
                                break;
                            }
                        }
                    }
                    // Rounding can leave `target` past the last bucket; the last
                    // positive-weight action absorbs it.
                    let a = pick.expect("enough positive weights");
                    total -= buf.remaining[a];
                    buf.remaining[a] = 0.0;
                    buf.out.push(a);
                }
            }
        }
        &buf.out
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> Vec<usize> {
        let mut buf = SubsetBuffer::default();
        self.sample_into(s, rng, &mut buf).to_vec()
    }
}

fn check_m(num_actions: usize, m: usize) -> Result<(), SamplerError> {
    if m == 0 || m > num_actions {
        Err(SamplerError::SubsetSize {
            m,
            actions: num_actions,
        })
    } else {
        Ok(())
    }
}

/// `q̃(s, a)` table with its minima.
#[derive(Debug, Clone, PartialEq)]
pub struct JointInclusion {
    num_actions: usize,
    tilde_q: Vec<f64>,
    pub q_min: f64,
    pub p_min: f64,
    /// False when the table is a Monte-Carlo estimate.
    pub exact: bool,
}

impl JointInclusion {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.tilde_q[s * self.num_actions + a]
    }

    pub fn table(&self) -> &[f64] {
        &self.tilde_q
    }
}

/// Monte-Carlo settings for samplers without closed-form inclusion
/// probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonteCarlo {
    /// Subset draws per state.
    pub samples: usize,
    pub seed: u64,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        Self {
            samples: 100_000,
            seed: 0,
        }
    }
}

/// Computes `q̃`, `q_min` and `p_min`.
///
/// Uniform subsets give the exact product `p(s) · m / A`; weighted subsets
/// are estimated by drawing `mc.samples` subsets per state.
pub fn joint_inclusion(
    states: &StateSampler,
    actions: &ActionSubsetSampler,
    mdp: &Mdp,
    mc: MonteCarlo,
) -> Result<JointInclusion, SamplerError> {
    if states.num_states() != mdp.num_states() {
        return Err(SamplerError::Mismatch {
            what: "states",
            expected: mdp.num_states(),
            got: states.num_states(),
        });
    }
    actions.check_against(mdp)?;
    if let Some(s) = states.probabilities().iter().position(|&p| p <= 0.0) {
        return Err(SamplerError::ZeroProbabilityState(s));
    }
    let num_actions = mdp.num_actions();
    let (tilde_q, exact) = match actions.uniform_inclusion() {
        Some(inclusion) => (
            states
                .probabilities()
                .iter()
                .flat_map(|&p| std::iter::repeat_n(p * inclusion, num_actions))
                .collect::<Vec<_>>(),
            true,
        ),
        None => {
            let mut rng = seeded_rng(mc.seed, 0);
            let mut buf = SubsetBuffer::default();
            let mut table = Vec::with_capacity(mdp.num_states() * num_actions);
            for (s, &p) in states.probabilities().iter().enumerate() {
                let mut counts = vec![0u64; num_actions];
                for _ in 0..mc.samples {
                    for &a in actions.sample_into(s, &mut rng, &mut buf) {
                        counts[a] += 1;
                    }
                }
                table.extend(
                    counts
                        .iter()
                        .map(|&c| p * c as f64 / mc.samples.max(1) as f64),
                );
            }
            (table, false)
        }
    };
    if let Some(idx) = tilde_q.iter().position(|&q| q <= 0.0) {
        return Err(SamplerError::ZeroInclusion {
            state: idx / num_actions,
            action: idx % num_actions,
        });
    }
    let q_min = tilde_q.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(JointInclusion {
        num_actions,
        tilde_q,
        q_min,
        p_min: states.p_min(),
        exact,
    })
}

/// State-distribution part of a sampler config: `"uniform"` or explicit
/// probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateDistConfig {
    Named(UniformTag),
    Probabilities(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UniformTag {
    Uniform,
}

impl Default for StateDistConfig {
    fn default() -> Self {
        StateDistConfig::Named(UniformTag::Uniform)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSamplerConfig {
    pub mode: SubsetMode,
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
}

/// `{state: "uniform" | [probs], action: {mode, m, weights?}}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default)]
    pub state: StateDistConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionSamplerConfig>,
}

impl SamplerConfig {
    pub fn build_state(&self, mdp: &Mdp) -> Result<StateSampler, SamplerError> {
        let sampler = match &self.state {
            StateDistConfig::Named(UniformTag::Uniform) => StateSampler::uniform(mdp.num_states()),
            StateDistConfig::Probabilities(p) => StateSampler::from_probabilities(p.clone())?,
        };
        if sampler.num_states() != mdp.num_states() {
            return Err(SamplerError::Mismatch {
                what: "states",
                expected: mdp.num_states(),
                got: sampler.num_states(),
            });
        }
        Ok(sampler)
    }

    pub fn build_actions(&self, mdp: &Mdp) -> Result<Option<ActionSubsetSampler>, SamplerError> {
        let Some(cfg) = &self.action else {
            return Ok(None);
        };
        let sampler = match (cfg.mode, &cfg.weights) {
            (SubsetMode::Uniform, _) => ActionSubsetSampler::uniform(mdp.num_actions(), cfg.m)?,
            (SubsetMode::Weighted, Some(w)) => ActionSubsetSampler::weighted(w.clone(), cfg.m)?,
            (SubsetMode::Weighted, None) => {
                return Err(SamplerError::BadWeights {
                    row: 0,
                    reason: "weighted mode needs a weights table".into(),
                })
            }
        };
        sampler.check_against(mdp)?;
        Ok(Some(sampler))
    }
}
