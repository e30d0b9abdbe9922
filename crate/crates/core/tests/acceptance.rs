//! Acceptance suite. Each criterion is its own test and prints one
//! `PASS`/`FAIL` line; run with `cargo test --test acceptance -- --nocapture`
//! to see them.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use davi_lab::analysis::{
    check_optimal_via_gap, complexity_table, horizon, iteration_bound, BoundInputs,
};
use davi_lab::bellman::{
    greedy_policy, lookahead_unchecked, optimal_value_oracle, policy_evaluation,
};
use davi_lab::fixtures::tiny2;
use davi_lab::generators::{Family, GeneratorSpec, RewardDist};
use davi_lab::harness::{
    curves_csv, run_experiment, AggregateCurve, ExperimentConfig, ExperimentResult,
};
use davi_lab::samplers::{
    joint_inclusion, seeded_rng, ActionSubsetSampler, MonteCarlo, StateSampler, SubsetBuffer,
};
use davi_lab::solvers::{
    avi_update, davi_update, Algorithm, CostModel, InitSpec, Samplers, Solver, SolverState,
};
use davi_lab::{Mdp, ValueFunction};
use rand::Rng;

type Outcome = Result<String, String>;

fn report(id: u32, name: &str, started: Instant, outcome: Outcome) {
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => println!("PASS [{id:02}] {name} ({secs:.2}s): {detail}"),
        Err(detail) => {
            println!("FAIL [{id:02}] {name} ({secs:.2}s): {detail}");
            panic!("criterion {id} failed: {detail}");
        }
    }
}

fn within(started: Instant, limit: Duration) -> Result<(), String> {
    let t = started.elapsed();
    if t <= limit {
        Ok(())
    } else {
        Err(format!(
            "took {:.1}s, limit {:.0}s",
            t.as_secs_f64(),
            limit.as_secs_f64()
        ))
    }
}

fn random_mdp(states: usize, actions: usize, successors: usize, discount: f64, seed: u64) -> Mdp {
    GeneratorSpec::new(
        Family::Random {
            states,
            actions,
            successors,
            p_term: 0.1,
            discount,
            rewards: RewardDist::Indicator,
        },
        seed,
    )
    .generate()
    .unwrap()
}

/// Runs DAVI for `iterations` steps and returns the final values.
fn davi_values(mdp: &Mdp, m: usize, seed: u64, iterations: u64) -> ValueFunction {
    let samplers = Samplers::uniform(mdp, Some(m)).unwrap();
    let mut solver = Solver::new(
        mdp,
        &samplers,
        Algorithm::Davi,
        &InitSpec::Zero,
        CostModel::Lookahead,
        seeded_rng(seed, 1),
    )
    .unwrap();
    for _ in 0..iterations {
        solver.step();
    }
    solver.into_state().values
}

#[test]
fn c01_oracle_convergence() {
    let started = Instant::now();
    let outcome = (|| {
        let mut instances: Vec<(String, Mdp)> = (0..50)
            .map(|seed| {
                (
                    format!("random seed {seed}"),
                    random_mdp(10, 5, 3, 1.0, seed),
                )
            })
            .collect();
        instances.push(("tiny2".into(), tiny2()));
        let mut runs = 0;
        let mut worst = 0.0f64;
        for (i, (name, mdp)) in instances.iter().enumerate() {
            let (v_star, _) = optimal_value_oracle(mdp, 1e-12).map_err(|e| e.to_string())?;
            for m in [1, 2, mdp.num_actions()] {
                let v = davi_values(mdp, m, i as u64, 100_000);
                let err = v.distance(&v_star);
                worst = worst.max(err);
                runs += 1;
                if err > 1e-6 {
                    return Err(format!("{name}, m={m}: ‖v_n − v*‖ = {err:e}"));
                }
            }
        }
        within(started, Duration::from_secs(30))?;
        Ok(format!("{runs} runs, worst ‖v_n − v*‖ = {worst:.2e}"))
    })();
    report(1, "oracle convergence", started, outcome);
}

/// Explicit init: `v0 = v_π0 − 1/2` satisfies `v0(s) ≤ L^{v0}(s, π0(s))`.
fn explicit_init(mdp: &Mdp, seed: u64) -> InitSpec {
    let mut rng = seeded_rng(seed, 99);
    let pi: Vec<usize> = (0..mdp.num_states())
        .map(|_| rng.random_range(0..mdp.num_actions()))
        .collect();
    let v = policy_evaluation(mdp, &davi_lab::Policy::new(pi.clone()), 1e-12).unwrap();
    InitSpec::Explicit {
        values: v.as_slice().iter().map(|x| x - 0.5).collect(),
        policy: pi,
    }
}

fn inits(mdp: &Mdp, seed: u64) -> [(&'static str, InitSpec); 3] {
    [
        ("zero", InitSpec::Zero),
        ("constant-negative", InitSpec::ConstantNegative { c: 3.0 }),
        ("explicit", explicit_init(mdp, seed)),
    ]
}

#[test]
fn c02_monotonicity_and_boundedness() {
    let started = Instant::now();
    let outcome = (|| {
        let gamma = 0.9;
        let mut steps = 0u64;
        let mut violations = Vec::new();
        for seed in 0..20u64 {
            let mdp = random_mdp(8, 6, 3, gamma, 1000 + seed);
            if !mdp.bounded01() {
                return Err("generator produced rewards outside [0, 1]".into());
            }
            for (label, init) in inits(&mdp, seed) {
                let m = 1 + (seed as usize % mdp.num_actions());
                let samplers = Samplers::uniform(&mdp, Some(m)).unwrap();
                let mut solver = Solver::new(
                    &mdp,
                    &samplers,
                    Algorithm::Davi,
                    &init,
                    CostModel::Lookahead,
                    seeded_rng(seed, 2),
                )
                .map_err(|e| format!("{label}: {e}"))?;
                let v0 = solver.state().values.clone();
                let lo = v0.min().min(0.0);
                let hi = v0.max().max(1.0 / (1.0 - gamma));
                let mut prev = v0;
                for _ in 0..1667 {
                    solver.step();
                    steps += 1;
                    let cur = &solver.state().values;
                    for s in 0..mdp.num_states() {
                        if cur[s] < prev[s] || cur[s] < lo || cur[s] > hi {
                            violations.push(format!(
                                "seed {seed} {label} state {s}: {} -> {}",
                                prev[s], cur[s]
                            ));
                        }
                    }
                    prev = cur.clone();
                }
            }
        }
        if steps < 100_000 {
            return Err(format!("only {steps} steps fuzzed"));
        }
        match violations.first() {
            None => Ok(format!("{steps} steps, zero violations")),
            Some(v) => Err(format!("{} violations, first: {v}", violations.len())),
        }
    })();
    report(2, "monotonicity and boundedness", started, outcome);
}

#[test]
fn c03_full_subset_reduces_to_avi() {
    let started = Instant::now();
    let outcome = (|| {
        for seed in 0..20u64 {
            let mdp = random_mdp(12, 7, 4, 1.0, 2000 + seed);
            let states = StateSampler::uniform(mdp.num_states());
            let actions =
                ActionSubsetSampler::uniform(mdp.num_actions(), mdp.num_actions()).unwrap();
            let mut state_rng = seeded_rng(seed, 1);
            let mut subset_rng = seeded_rng(seed, 2);
            let zeros = ValueFunction::zeros(mdp.num_states());
            let mut avi = SolverState::new(zeros.clone(), None);
            let mut davi =
                SolverState::new(zeros, Some(davi_lab::Policy::constant(mdp.num_states(), 0)));
            let mut buf = SubsetBuffer::default();
            for step in 0..10_000 {
                let s = states.sample(&mut state_rng);
                avi_update(&mdp, &mut avi, s, CostModel::Lookahead);
                let subset = actions.sample_into(s, &mut subset_rng, &mut buf);
                davi_update(
                    &mdp,
                    &mut davi,
                    s,
                    subset,
                    CostModel::Lookahead,
                    &mut subset_rng,
                )
                .map_err(|e| e.to_string())?;
                let same = avi
                    .values
                    .as_slice()
                    .iter()
                    .zip(davi.values.as_slice())
                    .all(|(a, d)| a.to_bits() == d.to_bits());
                if !same {
                    return Err(format!("seed {seed}: traces differ at step {step}"));
                }
            }
        }
        Ok("20 MDPs × 10^4 steps bit-identical".into())
    })();
    report(
        3,
        "DAVI with m = A equals asynchronous VI",
        started,
        outcome,
    );
}

#[test]
fn c04_rate_bound() {
    let started = Instant::now();
    let outcome = (|| {
        let mdp = tiny2();
        let n = iteration_bound(3, 2, 0.25, 0.05).map_err(|e| e.to_string())?;
        let (v_star, _) = optimal_value_oracle(&mdp, 1e-12).map_err(|e| e.to_string())?;
        let target = mdp.discount().powi(3) * v_star.max_norm();
        let hits = (0..400u64)
            .filter(|&seed| davi_values(&mdp, 1, seed, n).distance(&v_star) <= target)
            .count();
        let frac = hits as f64 / 400.0;
        within(started, Duration::from_secs(10))?;
        if frac >= 0.95 {
            Ok(format!(
                "n = {n}, {hits}/400 runs within γ³‖v* − v0‖ = {target}"
            ))
        } else {
            Err(format!(
                "only {hits}/400 runs within {target} after n = {n}"
            ))
        }
    })();
    report(4, "rate bound", started, outcome);
}

#[test]
fn c05_policy_dominance() {
    let started = Instant::now();
    let outcome = (|| {
        let mut rng = seeded_rng(5, 0);
        let mut checked = 0;
        for k in 0..100u64 {
            let mdp = random_mdp(8, 6, 3, 0.9, 3000 + k / 10);
            let (_, init) = inits(&mdp, k)[(k % 3) as usize].clone();
            let m = rng.random_range(1..=mdp.num_actions());
            let samplers = Samplers::uniform(&mdp, Some(m)).unwrap();
            let mut solver = Solver::new(
                &mdp,
                &samplers,
                Algorithm::Davi,
                &init,
                CostModel::Lookahead,
                seeded_rng(k, 3),
            )
            .map_err(|e| e.to_string())?;
            let stop = rng.random_range(0..5_000);
            for _ in 0..stop {
                solver.step();
            }
            let st = solver.state();
            let pi = st.policy.as_ref().expect("DAVI keeps a policy");
            let v = st.values.as_slice();
            for s in 0..mdp.num_states() {
                let q = lookahead_unchecked(&mdp, v, s, pi[s]);
                if q < v[s] {
                    return Err(format!(
                        "checkpoint {k}, state {s}: L(s, π(s)) = {q} < v(s) = {}",
                        v[s]
                    ));
                }
            }
            let v_pi = policy_evaluation(&mdp, pi, 1e-12).map_err(|e| e.to_string())?;
            for s in 0..mdp.num_states() {
                if v_pi[s] < v[s] - 1e-9 {
                    return Err(format!(
                        "checkpoint {k}, state {s}: v_π = {} < v_n − 1e-9 = {}",
                        v_pi[s],
                        v[s] - 1e-9
                    ));
                }
            }
            checked += 1;
        }
        Ok(format!("{checked} checkpoints"))
    })();
    report(5, "policy dominance", started, outcome);
}

#[test]
fn c06_bound_calculators() {
    let started = Instant::now();
    let outcome = (|| {
        let n = iteration_bound(2, 4, 0.25, 0.1).map_err(|e| e.to_string())?;
        if n != 32 {
            return Err(format!("iteration_bound(2,4,0.25,0.1) = {n}"));
        }
        let h = horizon(0.9, 0.1, 10.0).map_err(|e| e.to_string())?;
        if (h - 46.0517).abs() > 1e-3 {
            return Err(format!("horizon = {h}"));
        }
        let needle = Mdp::from_flat(
            1,
            10_000,
            vec![0.0; 10_000],
            vec![vec![]; 10_000],
            1.0,
            true,
        )
        .map_err(|e| e.to_string())?;
        let q = joint_inclusion(
            &StateSampler::uniform(1),
            &ActionSubsetSampler::uniform(10_000, 100).unwrap(),
            &needle,
            MonteCarlo::default(),
        )
        .map_err(|e| e.to_string())?;
        if q.q_min != 0.01 {
            return Err(format!("q_min = {}", q.q_min));
        }
        for (s, a) in [(4, 4), (20, 7), (100, 1000)] {
            let t = complexity_table(&BoundInputs::uniform(0.9, 0.1, 0.05, 0.0, s, a, a))
                .map_err(|e| e.to_string())?;
            if t.davi != t.avi {
                return Err(format!("S={s}, A={a}: DAVI {} vs AVI {}", t.davi, t.avi));
            }
        }
        Ok(format!(
            "n = 32, H = {h:.4}, q_min = 0.01, DAVI = AVI at m = A"
        ))
    })();
    report(6, "bound calculators", started, outcome);
}

#[test]
fn c07_optimality_capture() {
    let started = Instant::now();
    let outcome = (|| {
        let mdp = tiny2();
        let (v_star, _) = optimal_value_oracle(&mdp, 1e-12).map_err(|e| e.to_string())?;
        let radius = 0.5;
        let samplers = Samplers::uniform(&mdp, Some(1)).unwrap();
        let mut captured = 0;
        for seed in 0..100u64 {
            let mut solver = Solver::new(
                &mdp,
                &samplers,
                Algorithm::Davi,
                &InitSpec::Zero,
                CostModel::Lookahead,
                seeded_rng(seed, 1),
            )
            .map_err(|e| e.to_string())?;
            let mut steps = 0;
            while solver.state().values.distance(&v_star) >= radius {
                solver.step();
                steps += 1;
                if steps > 1_000_000 {
                    return Err(format!("seed {seed} never entered the capture region"));
                }
            }
            let pi = greedy_policy(&mdp, &solver.state().values).map_err(|e| e.to_string())?;
            if !check_optimal_via_gap(&mdp, &pi).map_err(|e| e.to_string())? {
                return Err(format!(
                    "seed {seed}: greedy policy {:?} not optimal",
                    pi.as_slice()
                ));
            }
            captured += 1;
        }
        Ok(format!("{captured}/100 runs"))
    })();
    report(7, "optimality capture", started, outcome);
}

fn preset(name: &str) -> ExperimentConfig {
    let path: PathBuf = [
        env!("CARGO_MANIFEST_DIR"),
        "presets",
        &format!("{name}.json"),
    ]
    .iter()
    .collect();
    ExperimentConfig::load(&path).unwrap()
}

fn curve(res: &ExperimentResult, alg: Algorithm, m: Option<usize>) -> &AggregateCurve {
    res.curves
        .iter()
        .find(|c| c.algorithm == alg && c.m == m)
        .unwrap_or_else(|| panic!("no {alg} m={m:?} curve"))
}

fn davi_curves(res: &ExperimentResult) -> impl Iterator<Item = &AggregateCurve> {
    res.curves.iter().filter(|c| c.algorithm == Algorithm::Davi)
}

fn fmt_cost(c: Option<f64>) -> String {
    c.map_or("never".into(), |c| c.to_string())
}

#[test]
fn c08_desk_scale_curve_orderings() {
    let started = Instant::now();
    let outcome = (|| {
        let mut notes = Vec::new();

        let cfg = preset("needle-desk");
        let a = cfg.generator.clone();
        let actions = match a.family {
            Family::SingleNeedle { actions } => actions as f64,
            _ => return Err("needle preset has the wrong family".into()),
        };
        let res = run_experiment(&cfg).map_err(|e| e.to_string())?;
        if res.curves.iter().any(|c| c.runs != 200) {
            return Err("needle: expected 200 runs".into());
        }
        let avi = curve(&res, Algorithm::Avi, None);
        for (g, m) in avi.grid.iter().zip(&avi.mean) {
            let expected = if *g >= actions { 1.0 } else { 0.0 };
            if *m != expected {
                return Err(format!("(a) AVI mean {m} at cost {g}, expected {expected}"));
            }
        }
        for c in davi_curves(&res) {
            let before_half = c.mean_at(actions / 2.0 - 1.0);
            if before_half <= 0.0 {
                return Err(format!(
                    "(a) DAVI m={:?} mean {before_half} before cost A/2",
                    c.m
                ));
            }
        }
        notes.push("(a) AVI steps to 1 at A; every DAVI mean > 0 before A/2".to_string());

        let res = run_experiment(&preset("multi-desk")).map_err(|e| e.to_string())?;
        let avi_hit = curve(&res, Algorithm::Avi, None).first_reaching(0.99);
        for c in davi_curves(&res) {
            let hit = c.first_reaching(0.99);
            let earlier = matches!((hit, avi_hit), (Some(d), Some(a)) if d < a)
                || (hit.is_some() && avi_hit.is_none());
            if !earlier {
                return Err(format!(
                    "(b) DAVI m={:?} reaches 0.99 at {}, AVI at {}",
                    c.m,
                    fmt_cost(hit),
                    fmt_cost(avi_hit)
                ));
            }
            notes.push(format!("(b) m={} at {}", c.m.unwrap_or(0), fmt_cost(hit)));
        }
        notes.push(format!("(b) AVI at {}", fmt_cost(avi_hit)));

        let res = run_experiment(&preset("random-desk")).map_err(|e| e.to_string())?;
        let target = 0.99
            * res
                .oracle_mean
                .ok_or("random preset must enable the oracle")?;
        let davi = curve(&res, Algorithm::Davi, Some(5)).first_reaching(target);
        let Some(d) = davi else {
            return Err(format!("(c) DAVI m=5 never reaches {target}"));
        };
        for alg in [Algorithm::Avi, Algorithm::Vi] {
            let other = curve(&res, alg, None).first_reaching(target);
            if other.is_some_and(|o| o <= d) {
                return Err(format!(
                    "(c) {alg} reaches {target} at {}, DAVI m=5 at {d}",
                    fmt_cost(other)
                ));
            }
            notes.push(format!("(c) {alg} at {}", fmt_cost(other)));
        }
        notes.push(format!("(c) DAVI m=5 at {d}"));
        within(started, Duration::from_secs(300))?;
        Ok(notes.join("; "))
    })();
    report(8, "curve orderings at desk scale", started, outcome);
}

#[test]
fn c09_reproducibility() {
    let started = Instant::now();
    let outcome = (|| {
        for name in ["needle-desk", "multi-desk", "tree-desk", "random-desk"] {
            let mut cfg = preset(name);
            cfg.runs = 40;
            cfg.workers = Some(1);
            let a = curves_csv(&run_experiment(&cfg).map_err(|e| e.to_string())?.curves);
            cfg.workers = Some(3);
            let b = curves_csv(&run_experiment(&cfg).map_err(|e| e.to_string())?.curves);
            if a != b {
                return Err(format!("{name}: CSV differs between reruns"));
            }
        }
        Ok("4 presets rerun with 1 and 3 workers, CSV byte-identical".into())
    })();
    report(9, "reproducibility", started, outcome);
}

fn sample_mean_z(spec: GeneratorSpec, mean: f64, sd: f64) -> Result<(f64, f64), String> {
    let mdp = spec.generate().map_err(|e| e.to_string())?;
    let r = mdp.rewards();
    let n = r.len() as f64;
    let m = r.iter().sum::<f64>() / n;
    Ok((m, (m - mean) / (sd / n.sqrt())))
}

#[test]
fn c10_reward_distribution_means() {
    let started = Instant::now();
    let outcome = (|| {
        let n = 1_000_000;
        let alpha = 2.5f64;
        let pareto_mean = alpha / (alpha - 1.0);
        let pareto_sd = (alpha / ((alpha - 1.0).powi(2) * (alpha - 2.0))).sqrt();
        let (pm, pz) = sample_mean_z(
            GeneratorSpec::new(
                Family::SinglePareto {
                    actions: n,
                    shape: alpha,
                },
                0,
            ),
            pareto_mean,
            pareto_sd,
        )?;
        let (nm, nz) = sample_mean_z(
            GeneratorSpec::new(Family::SingleNormal { actions: n }, 0),
            0.0,
            1.0,
        )?;
        let detail =
            format!("pareto mean {pm:.5} (z = {pz:.2}), normal mean {nm:.5} (z = {nz:.2})");
        if pz.abs() <= 5.0 && nz.abs() <= 5.0 {
            Ok(detail)
        } else {
            Err(detail)
        }
    })();
    report(10, "reward distribution means", started, outcome);
}
