//! Closed-form complexity quantities and optimality checks.
//!
//! All magnitudes drop big-O constants. They are planning aids for comparing
//! VI, asynchronous VI and DAVI side by side, not runtime predictions.

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::bellman::{lookahead_unchecked, optimal_value_oracle, policy_evaluation};
use crate::mdp::{Mdp, MdpError, Policy, ValueFunction};

/// Accuracy used for the policy-evaluation and oracle solves inside checks.
pub const SOLVE_TOL: f64 = 1e-12;

/// Numerical allowance when comparing `v_π` against `v* − ε`.
pub const VERIFY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("{name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("epsilon {eps} must be below the distance bound {dist}")]
    EpsilonTooLarge { eps: f64, dist: f64 },
    #[error("value gap is undefined: every state has all actions tied")]
    UndefinedGap,
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

fn check_open(
    name: &'static str,
    value: f64,
    lo: f64,
    hi: f64,
    range: &'static str,
) -> Result<(), AnalysisError> {
    if value > lo && value < hi {
        Ok(())
    } else {
        Err(AnalysisError::OutOfRange { name, value, range })
    }
}

fn check_discount(gamma: f64) -> Result<(), AnalysisError> {
    if (0.0..1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(AnalysisError::OutOfRange {
            name: "gamma",
            value: gamma,
            range: "[0, 1)",
        })
    }
}

/// Upper bound `1/(1−γ) + ‖v0‖` on `‖v* − v0‖` for rewards in `[0, 1]`.
pub fn default_distance_bound(gamma: f64, v0_norm: f64) -> f64 {
    1.0 / (1.0 - gamma) + v0_norm
}

/// Horizon `H_{γ,ε} = ln(dist/ε) / (1 − γ)`.
pub fn horizon(gamma: f64, eps: f64, dist_bound: f64) -> Result<f64, AnalysisError> {
    check_discount(gamma)?;
    check_open("dist_bound", dist_bound, 0.0, f64::INFINITY, "(0, inf)")?;
    check_open("eps", eps, 0.0, f64::INFINITY, "(0, inf)")?;
    if eps >= dist_bound {
        return Err(AnalysisError::EpsilonTooLarge {
            eps,
            dist: dist_bound,
        });
    }
    Ok((dist_bound / eps).ln() / (1.0 - gamma))
}

/// `l · ⌈ln(S l / δ) / ln(1 / (1 − q))⌉` iterations for `l` contractions
/// with probability `1 − δ`.
///
/// Pass `q_min` for DAVI or `p_min` for asynchronous VI.
pub fn iteration_bound(
    l: u64,
    num_states: usize,
    min_prob: f64,
    delta: f64,
) -> Result<u64, AnalysisError> {
    if l == 0 {
        return Err(AnalysisError::OutOfRange {
            name: "l",
            value: 0.0,
            range: "[1, inf)",
        });
    }
    if num_states == 0 {
        return Err(AnalysisError::OutOfRange {
            name: "S",
            value: 0.0,
            range: "[1, inf)",
        });
    }
    check_prob("q_min", min_prob)?;
    check_open("delta", delta, 0.0, 1.0, "(0, 1)")?;
    Ok(l * log_ratio(num_states, l as f64, min_prob, delta).ceil() as u64)
}

/// `τ = H · ln(S H / δ) / ln(1 / (1 − q_min))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TauBound {
    pub horizon: f64,
    pub tau: f64,
}

impl TauBound {
    /// `m · S · τ` elementary operations.
    pub fn operations(&self, m: usize, num_states: usize) -> f64 {
        m as f64 * num_states as f64 * self.tau
    }
}

/// `ln(S x / δ) / ln(1 / (1 − q))`, taken as 1 when `q = 1`: a pair that is
/// hit on every iteration needs one iteration per contraction.
fn log_ratio(num_states: usize, x: f64, min_prob: f64, delta: f64) -> f64 {
    if min_prob >= 1.0 {
        return 1.0;
    }
    (num_states as f64 * x / delta).ln() / (1.0 / (1.0 - min_prob)).ln()
}

fn check_prob(name: &'static str, q: f64) -> Result<(), AnalysisError> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(AnalysisError::OutOfRange {
            name,
            value: q,
            range: "(0, 1]",
        })
    }
}

pub fn tau_for_epsilon(
    gamma: f64,
    eps: f64,
    dist_bound: f64,
    num_states: usize,
    q_min: f64,
    delta: f64,
) -> Result<TauBound, AnalysisError> {
    let h = horizon(gamma, eps, dist_bound)?;
    check_prob("q_min", q_min)?;
    check_open("delta", delta, 0.0, 1.0, "(0, 1)")?;
    Ok(TauBound {
        horizon: h,
        tau: h * log_ratio(num_states, h, q_min, delta),
    })
}

/// Inputs shared by every row of the complexity table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundInputs {
    pub gamma: f64,
    pub eps: f64,
    pub delta: f64,
    /// `‖v* − v0‖` or an upper bound on it.
    pub dist_bound: f64,
    pub num_states: usize,
    pub num_actions: usize,
    pub m: usize,
    pub q_min: f64,
    pub p_min: f64,
}

impl BoundInputs {
    /// Uniform state and subset sampling: `q_min = m/(SA)`, `p_min = 1/S`,
    /// with the default distance bound for `‖v0‖ = v0_norm`.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        gamma: f64,
        eps: f64,
        delta: f64,
        v0_norm: f64,
        num_states: usize,
        num_actions: usize,
        m: usize,
    ) -> Self {
        Self {
            gamma,
            eps,
            delta,
            dist_bound: default_distance_bound(gamma, v0_norm),
            num_states,
            num_actions,
            m,
            q_min: uniform_q_min(num_states, num_actions, m),
            p_min: 1.0 / num_states as f64,
        }
    }
}

/// `m / (S A)`, the largest achievable `q_min`.
pub fn uniform_q_min(num_states: usize, num_actions: usize, m: usize) -> f64 {
    m as f64 / (num_states as f64 * num_actions as f64)
}

/// Constant-free magnitudes of the three complexity bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityTable {
    /// `A S² H_{γ, ε(1−γ)/(2γ)}`; `None` when that horizon is undefined.
    pub vi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vi_note: Option<String>,
    /// `A S H ln(S H/δ) / ln(1/(1 − p_min))`.
    pub avi: f64,
    /// `m S H ln(S H/δ) / ln(1/(1 − q_min))`.
    pub davi: f64,
}

pub fn complexity_table(inputs: &BoundInputs) -> Result<ComplexityTable, AnalysisError> {
    let BoundInputs {
        gamma,
        eps,
        delta,
        dist_bound,
        num_states,
        num_actions,
        m,
        q_min,
        p_min,
    } = *inputs;
    let h = horizon(gamma, eps, dist_bound)?;
    check_prob("q_min", q_min)?;
    check_prob("p_min", p_min)?;
    check_open("delta", delta, 0.0, 1.0, "(0, 1)")?;
    let s = num_states as f64;

    let (vi, vi_note) = if gamma == 0.0 {
        (
            None,
            Some("undefined for gamma = 0 (eps(1-gamma)/(2 gamma) divides by zero)".to_string()),
        )
    } else {
        match horizon(gamma, eps * (1.0 - gamma) / (2.0 * gamma), dist_bound) {
            Ok(h_vi) => (Some(num_actions as f64 * s * s * h_vi), None),
            Err(e) => (None, Some(format!("undefined: {e}"))),
        }
    };
    Ok(ComplexityTable {
        vi,
        vi_note,
        avi: num_actions as f64 * s * h * log_ratio(num_states, h, p_min, delta),
        davi: m as f64 * s * h * log_ratio(num_states, h, q_min, delta),
    })
}

/// Every evaluated bound for one set of inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub horizon: f64,
    /// Number of contractions the iteration bound targets.
    pub l: u64,
    pub n_iterations: u64,
    /// Same bound with `p_min`, for asynchronous VI.
    pub n_iterations_avi: u64,
    pub tau: f64,
    /// `m S τ`.
    pub cost_magnitude: f64,
    pub table: ComplexityTable,
}

/// Evaluates the full report. `l` defaults to `⌈H⌉`.
pub fn bound_report(inputs: &BoundInputs, l: Option<u64>) -> Result<BoundReport, AnalysisError> {
    let tau = tau_for_epsilon(
        inputs.gamma,
        inputs.eps,
        inputs.dist_bound,
        inputs.num_states,
        inputs.q_min,
        inputs.delta,
    )?;
    let l = l.unwrap_or_else(|| (tau.horizon.ceil() as u64).max(1));
    Ok(BoundReport {
        inputs: *inputs,
        horizon: tau.horizon,
        l,
        n_iterations: iteration_bound(l, inputs.num_states, inputs.q_min, inputs.delta)?,
        n_iterations_avi: iteration_bound(l, inputs.num_states, inputs.p_min, inputs.delta)?,
        tau: tau.tau,
        cost_magnitude: tau.operations(inputs.m, inputs.num_states),
        table: complexity_table(inputs)?,
    })
}

impl BoundReport {
    /// Aligned two-column text rendering.
    pub fn to_table(&self) -> String {
        let i = &self.inputs;
        let vi = match self.table.vi {
            Some(v) => format!("{v:.6e}"),
            None => "undefined".to_string(),
        };
        let rows = [
            ("gamma", format!("{}", i.gamma)),
            ("eps", format!("{}", i.eps)),
            ("delta", format!("{}", i.delta)),
            ("dist_bound", format!("{}", i.dist_bound)),
            ("S", format!("{}", i.num_states)),
            ("A", format!("{}", i.num_actions)),
            ("m", format!("{}", i.m)),
            ("q_min", format!("{}", i.q_min)),
            ("p_min", format!("{}", i.p_min)),
            ("horizon H", format!("{:.6}", self.horizon)),
            ("l", format!("{}", self.l)),
            ("n (DAVI, q_min)", format!("{}", self.n_iterations)),
            ("n (async VI, p_min)", format!("{}", self.n_iterations_avi)),
            ("tau", format!("{:.6}", self.tau)),
            ("m*S*tau", format!("{:.6e}", self.cost_magnitude)),
            ("VI  A*S^2*H'", vi),
            ("AVI A*S*H*log", format!("{:.6e}", self.table.avi)),
            ("DAVI m*S*H*log", format!("{:.6e}", self.table.davi)),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v}\n"));
        }
        out
    }
}

fn serialize_radius<S: Serializer>(radius: &Option<f64>, ser: S) -> Result<S::Ok, S::Error> {
    match radius {
        Some(r) if r.is_infinite() => ser.serialize_str("inf"),
        Some(r) => ser.serialize_f64(*r),
        None => ser.serialize_none(),
    }
}

/// Best-versus-second-best look-ahead gaps at a value function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    /// `None` where every action ties.
    pub per_state: Vec<Option<f64>>,
    /// Minimum over states with a defined gap.
    pub global: Option<f64>,
    /// `Δ / (2γ)`; `inf` when `γ = 0`.
    #[serde(serialize_with = "serialize_radius")]
    pub capture_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl GapReport {
    pub fn global_gap(&self) -> Result<f64, AnalysisError> {
        self.global.ok_or(AnalysisError::UndefinedGap)
    }

    pub fn undefined_states(&self) -> Vec<usize> {
        self.per_state
            .iter()
            .enumerate()
            .filter_map(|(s, g)| g.is_none().then_some(s))
            .collect()
    }
}

/// Per-state gap `min{max_a' L(s,a') − L(s,a)} \ {0}` at `v`.
///
/// Gaps compare exactly against zero: actions whose look-ahead equals the
/// maximum bit for bit count as tied.
pub fn value_gap(mdp: &Mdp, v: &ValueFunction) -> Result<GapReport, AnalysisError> {
    mdp.check_values(v)?;
    let mut q = vec![0.0; mdp.num_actions()];
    let per_state: Vec<Option<f64>> = (0..mdp.num_states())
        .map(|s| {
            for (a, slot) in q.iter_mut().enumerate() {
                *slot = lookahead_unchecked(mdp, v.as_slice(), s, a);
            }
            let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            q.iter()
                .map(|&x| best - x)
                .filter(|&d| d != 0.0)
                .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))))
        })
        .collect();
    let global = per_state.iter().flatten().copied().reduce(f64::min);
    let gamma = mdp.discount();
    let (capture_radius, note) = match global {
        None => (None, Some("all actions tie in every state".to_string())),
        Some(_) if gamma == 0.0 => (
            Some(f64::INFINITY),
            Some("gamma = 0: every greedy policy is optimal, radius unbounded".to_string()),
        ),
        Some(g) => (Some(g / (2.0 * gamma)), None),
    };
    Ok(GapReport {
        per_state,
        global,
        capture_radius,
        note,
    })
}

/// Outcome of an ε-optimality test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonCheck {
    pub optimal: bool,
    /// `v_π(s) − (v*(s) − ε)`; negative entries violate the test.
    pub slack: Vec<f64>,
    pub min_slack: f64,
    pub worst_state: usize,
    /// `‖v* − v_π‖_∞`.
    pub shortfall: f64,
}

/// Tests `v_π ≥ v* − ε·1` with `v*` from [`optimal_value_oracle`].
pub fn check_epsilon_optimal(
    mdp: &Mdp,
    pi: &Policy,
    eps: f64,
) -> Result<EpsilonCheck, AnalysisError> {
    let (v_star, _) = optimal_value_oracle(mdp, SOLVE_TOL)?;
    check_epsilon_optimal_against(mdp, pi, eps, &v_star)
}

/// As [`check_epsilon_optimal`] with a precomputed `v*`.
pub fn check_epsilon_optimal_against(
    mdp: &Mdp,
    pi: &Policy,
    eps: f64,
    v_star: &ValueFunction,
) -> Result<EpsilonCheck, AnalysisError> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(AnalysisError::OutOfRange {
            name: "eps",
            value: eps,
            range: "[0, inf)",
        });
    }
    mdp.check_values(v_star)?;
    let v_pi = policy_evaluation(mdp, pi, SOLVE_TOL)?;
    let slack: Vec<f64> = v_pi
        .as_slice()
        .iter()
        .zip(v_star.as_slice())
        .map(|(vp, vs)| vp - (vs - eps))
        .collect();
    let (worst_state, min_slack) =
        slack
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |best, (s, x)| if x < best.1 { (s, x) } else { best },
            );
    Ok(EpsilonCheck {
        optimal: min_slack >= -VERIFY_TOL,
        shortfall: v_star.distance(&v_pi),
        slack,
        min_slack,
        worst_state,
    })
}

/// True iff `v_π > v* − Δ^{v*}·1`, which makes `π` optimal.
pub fn check_optimal_via_gap(mdp: &Mdp, pi: &Policy) -> Result<bool, AnalysisError> {
    let (v_star, _) = optimal_value_oracle(mdp, SOLVE_TOL)?;
    check_optimal_via_gap_against(mdp, pi, &v_star)
}

pub fn check_optimal_via_gap_against(
    mdp: &Mdp,
    pi: &Policy,
    v_star: &ValueFunction,
) -> Result<bool, AnalysisError> {
    let gap = value_gap(mdp, v_star)?.global_gap()?;
    let v_pi = policy_evaluation(mdp, pi, SOLVE_TOL)?;
    let worst = v_star
        .as_slice()
        .iter()
        .zip(v_pi.as_slice())
        .map(|(s, p)| s - p)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(worst < gap)
}
