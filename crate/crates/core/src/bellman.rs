//! Exact Bellman machinery: look-ahead values, the optimality and policy
//! operators, policy evaluation and the optimal-value oracle.
//!
//! Deterministic argmaxes here break ties toward the lowest action index.

use nalgebra::{DMatrix, DVector};

use crate::mdp::{Mdp, MdpError, Policy, ValueFunction};

/// Largest state count solved with a dense LU factorization.
pub const DIRECT_SOLVE_MAX_STATES: usize = 512;

/// Sweep cap for the iterative evaluators.
pub const MAX_SWEEPS: u64 = 10_000_000;

/// `r(s,a) + γ Σ p(s'|s,a) v(s')` without bounds checks beyond slice indexing.
#[inline]
pub fn lookahead_unchecked(mdp: &Mdp, v: &[f64], s: usize, a: usize) -> f64 {
    let expected: f64 = mdp
        .successors(s, a)
        .iter()
        .map(|&(next, p)| p * v[next])
        .sum();
    mdp.reward(s, a) + mdp.discount() * expected
}

/// Look-ahead value `L^v(s, a)`. Missing transition mass contributes 0.
pub fn lookahead(mdp: &Mdp, v: &ValueFunction, s: usize, a: usize) -> Result<f64, MdpError> {
    mdp.check_values(v)?;
    mdp.check_state(s)?;
    mdp.check_action(a)?;
    Ok(lookahead_unchecked(mdp, v.as_slice(), s, a))
}

#[inline]
pub(crate) fn backup_unchecked(mdp: &Mdp, v: &[f64], s: usize) -> (f64, usize) {
    let mut best = (lookahead_unchecked(mdp, v, s, 0), 0);
    for a in 1..mdp.num_actions() {
        let q = lookahead_unchecked(mdp, v, s, a);
        if q > best.0 {
            best = (q, a);
        }
    }
    best
}

/// `(max_a L^v(s,a), argmax)`, ties to the lowest action index.
pub fn bellman_backup(mdp: &Mdp, v: &ValueFunction, s: usize) -> Result<(f64, usize), MdpError> {
    mdp.check_values(v)?;
    mdp.check_state(s)?;
    Ok(backup_unchecked(mdp, v.as_slice(), s))
}

/// Synchronous optimality operator `T v`; the input is not modified.
pub fn apply_t(mdp: &Mdp, v: &ValueFunction) -> Result<ValueFunction, MdpError> {
    mdp.check_values(v)?;
    Ok(ValueFunction::new_unchecked(
        (0..mdp.num_states())
            .map(|s| backup_unchecked(mdp, v.as_slice(), s).0)
            .collect(),
    ))
}

/// Policy operator `T_π v(s) = L^v(s, π(s))`.
pub fn apply_t_pi(mdp: &Mdp, v: &ValueFunction, pi: &Policy) -> Result<ValueFunction, MdpError> {
    mdp.check_values(v)?;
    mdp.check_policy(pi)?;
    Ok(ValueFunction::new_unchecked(t_pi_raw(
        mdp,
        v.as_slice(),
        pi,
    )))
}

fn t_pi_raw(mdp: &Mdp, v: &[f64], pi: &Policy) -> Vec<f64> {
    (0..mdp.num_states())
        .map(|s| lookahead_unchecked(mdp, v, s, pi[s]))
        .collect()
}

/// Greedy policy with respect to `v`.
pub fn greedy_policy(mdp: &Mdp, v: &ValueFunction) -> Result<Policy, MdpError> {
    mdp.check_values(v)?;
    Ok(Policy::new(
        (0..mdp.num_states())
            .map(|s| backup_unchecked(mdp, v.as_slice(), s).1)
            .collect(),
    ))
}

/// `‖T v − v‖_∞`.
pub fn bellman_residual(mdp: &Mdp, v: &ValueFunction) -> Result<f64, MdpError> {
    Ok(apply_t(mdp, v)?.distance(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMethod {
    /// Direct solve up to [`DIRECT_SOLVE_MAX_STATES`], sweeps above.
    Auto,
    Direct,
    Iterative,
}

/// Value of `pi`, accurate to `‖T_π v − v‖_∞ ≤ tol`.
pub fn policy_evaluation(mdp: &Mdp, pi: &Policy, tol: f64) -> Result<ValueFunction, MdpError> {
    policy_evaluation_with(mdp, pi, tol, EvalMethod::Auto)
}

pub fn policy_evaluation_with(
    mdp: &Mdp,
    pi: &Policy,
    tol: f64,
    method: EvalMethod,
) -> Result<ValueFunction, MdpError> {
    check_tol(tol)?;
    mdp.check_policy(pi)?;
    let direct = match method {
        EvalMethod::Auto => mdp.num_states() <= DIRECT_SOLVE_MAX_STATES,
        EvalMethod::Direct => true,
        EvalMethod::Iterative => false,
    };
    let start = if direct { solve_direct(mdp, pi) } else { None };
    let start = start.unwrap_or_else(|| vec![0.0; mdp.num_states()]);
    // The LU solution is usually already within tol; sweeps polish it otherwise.
    iterate_t_pi(mdp, pi, start, tol, MAX_SWEEPS)
}

fn check_tol(tol: f64) -> Result<(), MdpError> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(MdpError::Tolerance(tol))
    }
}

/// Solves `(I − γ P_π) v = r_π`; `None` if the system is singular.
fn solve_direct(mdp: &Mdp, pi: &Policy) -> Option<Vec<f64>> {
    let n = mdp.num_states();
    let gamma = mdp.discount();
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for s in 0..n {
        let a = pi[s];
        rhs[s] = mdp.reward(s, a);
        for &(next, p) in mdp.successors(s, a) {
            m[(s, next)] -= gamma * p;
        }
    }
    let sol = m.lu().solve(&rhs)?;
    sol.iter()
        .all(|x| x.is_finite())
        .then(|| sol.iter().copied().collect())
}

fn iterate_t_pi(
    mdp: &Mdp,
    pi: &Policy,
    mut v: Vec<f64>,
    tol: f64,
    cap: u64,
) -> Result<ValueFunction, MdpError> {
    let mut residual = f64::INFINITY;
    for _ in 0..=cap {
        let next = t_pi_raw(mdp, &v, pi);
        residual = max_diff(&next, &v);
        if residual <= tol {
            return Ok(ValueFunction::new_unchecked(v));
        }
        v = next;
    }
    Err(MdpError::NoConvergence {
        sweeps: cap,
        residual,
    })
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Optimal value function and its greedy policy.
///
/// Acyclic MDPs are solved exactly by backward induction over a
/// topological order. Otherwise `T` is iterated from the zero vector until
/// successive iterates differ by at most `tol · max(1 − γ, 1e-6)` (or by a
/// few ulps of `‖v‖`, whichever is larger), then refined by policy
/// iteration so that the result is the value of an exactly evaluated
/// policy with no improving action.
pub fn optimal_value_oracle(mdp: &Mdp, tol: f64) -> Result<(ValueFunction, Policy), MdpError> {
    check_tol(tol)?;
    let v = match mdp.topological_order() {
        Some(order) => backward_induction(mdp, &order),
        None => {
            let v = value_iteration_to(mdp, tol, MAX_SWEEPS)?;
            policy_iteration_from(mdp, v, tol)?
        }
    };
    let v = ValueFunction::new_unchecked(v);
    let pi = greedy_policy(mdp, &v)?;
    Ok((v, pi))
}

fn backward_induction(mdp: &Mdp, order: &[usize]) -> Vec<f64> {
    let mut v = vec![0.0; mdp.num_states()];
    for &s in order.iter().rev() {
        v[s] = backup_unchecked(mdp, &v, s).0;
    }
    v
}

/// Upper limit on improvement rounds when refining the VI estimate.
const MAX_POLICY_ROUNDS: usize = 1000;

fn policy_iteration_from(mdp: &Mdp, v: Vec<f64>, tol: f64) -> Result<Vec<f64>, MdpError> {
    let mut pi = greedy_policy(mdp, &ValueFunction::new_unchecked(v))?;
    let mut v_pi = policy_evaluation(mdp, &pi, tol)?;
    for _ in 0..MAX_POLICY_ROUNDS {
        let vs = v_pi.as_slice();
        let mut changed = false;
        for s in 0..mdp.num_states() {
            let current = lookahead_unchecked(mdp, vs, s, pi[s]);
            let (best, a) = backup_unchecked(mdp, vs, s);
            // switching on rounding noise could cycle forever
            if best > current + 1e-12 * (1.0 + current.abs()) {
                pi.set(s, a);
                changed = true;
            }
        }
        if !changed {
            break;
        }
        v_pi = policy_evaluation(mdp, &pi, tol)?;
    }
    Ok(v_pi.into_vec())
}

fn value_iteration_to(mdp: &Mdp, tol: f64, cap: u64) -> Result<Vec<f64>, MdpError> {
    let threshold = tol * (1.0 - mdp.discount()).max(1e-6);
    let mut v = vec![0.0; mdp.num_states()];
    let mut diff = f64::INFINITY;
    for _ in 0..cap {
        let next: Vec<f64> = (0..mdp.num_states())
            .map(|s| backup_unchecked(mdp, &v, s).0)
            .collect();
        diff = max_diff(&next, &v);
        let scale = next.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        v = next;
        if diff <= threshold.max(4.0 * f64::EPSILON * scale) {
            return Ok(v);
        }
    }
    Err(MdpError::NoConvergence {
        sweeps: cap,
        residual: diff,
    })
}
