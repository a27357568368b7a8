//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! `OMDT_ACCEPTANCE_TIME_LIMIT` overrides the per-solve budget in seconds
//! (default 600). The solver backend follows `OMDT_SOLVER` as in the CLI.

mod props;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use omdt_core::envs::{build_env, EnvName, EnvSpec, FeatureMatrix};
use omdt_core::harness::{compute_anchors, path_heatmap, Anchors};
use omdt_core::mdp::{
    evaluate_policy_exact, normalized_return, q_from_values, value_iteration, MdpBuilder, TabularMdp,
    DEFAULT_VI_MAX_ITER, DEFAULT_VI_TOL,
};
use omdt_core::milp::{
    big_m, build_omdt, extract_tree, omdt_size, solve, verify_solution, BackendConfig, SolveStatus, Verification,
};
use omdt_core::tree::{candidate_thresholds, enumerate_trees, DEFAULT_ENUMERATION_BUDGET};
use omdt_core::viper::{viper_train, ViperConfig};

const DEFAULT_TIME_LIMIT: f64 = 600.0;

/// Reference depth-3 model sizes: (variables, constraints). The last four are
/// soft targets.
const SIZES: [(EnvName, usize, usize, bool); 13] = [
    (EnvName::FrozenLake4x4, 328, 735, true),
    (EnvName::FrozenLake8x8, 1_104, 2_895, true),
    (EnvName::FrozenLake12x12, 2_360, 6_495, true),
    (EnvName::Navigation3d, 2_528, 7_890, true),
    (EnvName::Sysadmin1, 6_584, 23_055, true),
    (EnvName::Sysadmin2, 6_584, 23_055, true),
    (EnvName::SysadminTree, 3_106, 10_383, true),
    (EnvName::Inventory, 22_414, 91_824, true),
    (EnvName::Xor, 5_016, 5_415, true),
    (EnvName::Blackjack, 6_187, 14_406, false),
    (EnvName::TigerVsAntelope, 10_850, 33_819, false),
    (EnvName::TrafficIntersection, 4_127, 9_762, false),
    (EnvName::TictactoeVsRandom, 61_239, 218_175, false),
];

/// Reference state counts where they differ from the generated ones.
fn reference_states(env: EnvName, generated: usize) -> usize {
    match env {
        EnvName::TrafficIntersection => 361,
        _ => generated,
    }
}

struct Env {
    mdp: TabularMdp,
    features: FeatureMatrix,
    anchors: Anchors,
}

impl Env {
    fn load(name: EnvName) -> Env {
        let (mdp, features) = build_env(&EnvSpec::new(name)).expect("environment builds");
        let anchors = compute_anchors(&mdp).expect("anchors");
        Env { mdp, features, anchors }
    }

    fn normalized(&self, j: f64) -> f64 {
        normalized_return(j, self.anchors.j_rand, self.anchors.j_opt).unwrap_or(f64::NAN)
    }
}

struct Solved {
    label: String,
    status: SolveStatus,
    objective: f64,
    gap: f64,
    seconds: f64,
    /// Exact return of the extracted tree, when the solver produced one.
    exact_return: Option<f64>,
    verification: Option<Verification>,
    max_x: f64,
    big_m: f64,
}

struct Run {
    time_limit: f64,
    envs: BTreeMap<EnvName, Env>,
    solved: Vec<Solved>,
    lines: Vec<(usize, bool, String)>,
}

impl Run {
    fn env(&mut self, name: EnvName) -> &Env {
        self.envs.entry(name).or_insert_with(|| Env::load(name))
    }

    fn config(&self) -> BackendConfig {
        BackendConfig::default().with_time_limit(self.time_limit).from_env()
    }

    /// Solves one OMDT instance and keeps its verification for the duality
    /// and big-M criteria. Returns an index into `self.solved`.
    fn solve(&mut self, name: EnvName, depth: usize) -> usize {
        let config = self.config();
        let env = self.env(name);
        let label = format!("{name} depth {depth}");
        let omdt = build_omdt(&env.mdp, &env.features, depth).expect("model builds");
        let solved = match solve(&omdt.model, &config, None) {
            Ok(outcome) => {
                let mut solved = Solved {
                    label: label.clone(),
                    status: outcome.status,
                    objective: outcome.objective,
                    gap: outcome.rel_gap,
                    seconds: outcome.wall_seconds,
                    exact_return: None,
                    verification: None,
                    max_x: 0.0,
                    big_m: big_m(env.mdp.gamma).unwrap(),
                };
                if let Some(values) = &outcome.values {
                    let l = &omdt.layout;
                    solved.max_x = (0..l.n_states)
                        .flat_map(|s| (0..l.n_actions).map(move |a| (s, a)))
                        .map(|(s, a)| values[l.x(s, a)])
                        .fold(f64::NEG_INFINITY, f64::max);
                    match extract_tree(&omdt, values)
                        .and_then(|tree| verify_solution(&env.mdp, &env.features, &omdt, values, &tree))
                    {
                        Ok(v) => {
                            solved.exact_return = Some(v.exact_return);
                            solved.verification = Some(v);
                        }
                        Err(e) => eprintln!("{label}: extraction failed: {e}"),
                    }
                }
                solved
            }
            Err(e) => {
                eprintln!("{label}: solve failed: {e}");
                Solved {
                    label: label.clone(),
                    status: SolveStatus::Infeasible,
                    objective: f64::NAN,
                    gap: f64::NAN,
                    seconds: f64::NAN,
                    exact_return: None,
                    verification: None,
                    max_x: f64::NAN,
                    big_m: f64::NAN,
                }
            }
        };
        eprintln!(
            "  solved {label}: {} objective {:.6} gap {:.2e} in {:.1}s",
            solved.status.as_str(),
            solved.objective,
            solved.gap,
            solved.seconds
        );
        self.solved.push(solved);
        self.solved.len() - 1
    }

    fn report(&mut self, criterion: usize, passed: bool, detail: String) {
        eprintln!("  criterion {criterion} done: {}", if passed { "pass" } else { "fail" });
        self.lines.push((criterion, passed, detail));
    }
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn model_sizes(run: &mut Run) {
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, vars, cons, hard) in SIZES {
        let env = run.env(name);
        let start = Instant::now();
        let omdt = build_omdt(&env.mdp, &env.features, 3).expect("model builds");
        let elapsed = start.elapsed().as_secs_f64();
        let (got_vars, got_cons) = (omdt.model.variables.len(), omdt.model.constraints.len());
        if elapsed >= 1.0 {
            ok = false;
            notes.push(format!("{name} took {elapsed:.2}s"));
        }
        if (got_vars, got_cons) == (vars, cons) {
            continue;
        }
        if hard {
            ok = false;
            notes.push(format!("{name} {got_vars}/{got_cons} != {vars}/{cons}"));
            continue;
        }
        // Back-solve the threshold count the reference variable count implies.
        let (n_s, n_a) = (reference_states(name, env.mdp.n_states), env.mdp.n_actions);
        let (base, _) = omdt_size(n_s, n_a, 0, 3);
        let (one, _) = omdt_size(n_s, n_a, 1, 3);
        let per_threshold = one - base;
        let implied = vars.checked_sub(base).filter(|d| d % per_threshold == 0).map(|d| d / per_threshold);
        let ours = (got_vars - omdt_size(env.mdp.n_states, n_a, 0, 3).0) / per_threshold;
        notes.push(format!(
            "soft {name} {got_vars}/{got_cons} vs {vars}/{cons}, sum K ours {ours}, reference implies {}",
            implied.map_or("non-integer".to_string(), |k| k.to_string())
        ));
    }
    let detail = if notes.is_empty() { "all thirteen sizes match, builds < 1 s".to_string() } else { notes.join("; ") };
    run.report(1, ok, detail);
}

fn frozenlake_sweep(run: &mut Run) {
    let targets = [0.19, 0.67, 0.96, 1.00];
    let mut results = Vec::new();
    for depth in 1..=4 {
        results.push(run.solve(EnvName::FrozenLake4x4, depth));
    }

    let d2 = &run.solved[results[1]];
    let pass2 = d2.status == SolveStatus::Optimal && (d2.objective - 0.37).abs() <= 0.005 && d2.gap <= 1e-4;
    let detail = format!("depth 2 {} objective {:.6} gap {:.2e}", d2.status.as_str(), d2.objective, d2.gap);
    run.report(2, pass2, detail);

    let env = &run.envs[&EnvName::FrozenLake4x4];
    let mut ok = true;
    let mut total = 0.0;
    let mut parts = Vec::new();
    for (depth, (&i, target)) in results.iter().zip(targets).enumerate() {
        let s = &run.solved[i];
        let norm = s.exact_return.map_or(f64::NAN, |j| env.normalized(j));
        ok &= s.status == SolveStatus::Optimal && (norm - target).abs() <= 0.01;
        total += s.seconds;
        parts.push(format!("d{} {norm:.3} {}", depth + 1, s.status.as_str()));
    }
    ok &= total <= 3600.0;
    let detail = format!("{}, {total:.0}s total", parts.join(", "));
    run.report(3, ok, detail);
}

fn oracle_equivalence(run: &mut Run) {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in EnvName::ALL {
        if run.env(name).mdp.n_states > 256 {
            continue;
        }
        let env = run.env(name);
        let thresholds = candidate_thresholds(&env.features).expect("thresholds");
        let oracle = enumerate_trees(&env.mdp, &env.features, 1, &thresholds, DEFAULT_ENUMERATION_BUDGET)
            .expect("enumeration")
            .expected_return;
        let reuse = run.solved.iter().position(|s| s.label == format!("{name} depth 1"));
        let i = reuse.unwrap_or_else(|| run.solve(name, 1));
        let s = &run.solved[i];
        let err = relative_error(oracle, s.objective);
        let agree = s.status == SolveStatus::Optimal && err <= 1e-6;
        ok &= agree;
        parts.push(if agree {
            format!("{name} ok")
        } else {
            format!("{name} oracle {oracle:.6} milp {:.6} {} gap {:.2e}", s.objective, s.status.as_str(), s.gap)
        });
    }
    run.report(4, ok, parts.join(", "));
}

fn self_loop() -> (TabularMdp, FeatureMatrix) {
    let mut b = MdpBuilder::new("self_loop", 1, 1, 0.99);
    b.add(0, 0, 0, 1.0, 1.0).initial(0, 1.0);
    (b.build(), FeatureMatrix::new(vec!["f".into()], vec![vec![0.0]]).unwrap())
}

fn big_m_bound(run: &mut Run) {
    let (mdp, features) = self_loop();
    let omdt = build_omdt(&mdp, &features, 1).expect("model builds");
    let x = solve(&omdt.model, &run.config(), None)
        .ok()
        .and_then(|o| o.values)
        .map_or(f64::NAN, |v| v[omdt.layout.x(0, 0)]);
    let mut ok = (x - 100.0).abs() <= 1e-6;
    let mut parts = vec![format!("self-loop x = {x:.9}")];
    for s in run.solved.iter().filter(|s| s.verification.is_some()) {
        if !(s.max_x <= s.big_m + 1e-6) {
            ok = false;
            parts.push(format!("{} max x {:.9} > {}", s.label, s.max_x, s.big_m));
        }
    }
    parts.push(format!("{} instances checked", run.solved.iter().filter(|s| s.verification.is_some()).count()));
    run.report(6, ok, parts.join(", "));
}

fn duality(run: &mut Run) {
    let mut ok = true;
    let mut checked = 0;
    let mut parts = Vec::new();
    for s in &run.solved {
        match &s.verification {
            Some(v) => {
                checked += 1;
                for f in v.failures() {
                    ok = false;
                    parts.push(format!("{} {} error {:.2e}", s.label, f.name, f.error));
                }
            }
            None if s.status == SolveStatus::Optimal => {
                ok = false;
                parts.push(format!("{} has no verifiable solution", s.label));
            }
            None => {}
        }
    }
    parts.insert(0, format!("{checked} solutions verified"));
    run.report(5, ok, parts.join(", "));
}

fn viper_gap(run: &mut Run) {
    let seeds = [0, 1, 2];
    let mut ok = true;
    let mut parts = Vec::new();
    for name in [EnvName::FrozenLake8x8, EnvName::FrozenLake12x12, EnvName::Xor] {
        let i = run.solve(name, 3);
        let env = &run.envs[&name];
        let omdt = run.solved[i].exact_return.map_or(f64::NAN, |j| env.normalized(j));
        let (v, teacher) = value_iteration(&env.mdp, DEFAULT_VI_TOL, DEFAULT_VI_MAX_ITER).expect("value iteration");
        let q = q_from_values(&env.mdp, &v);
        let viper: f64 = seeds
            .iter()
            .map(|&seed| {
                let config = ViperConfig { depth: 3, seed, ..ViperConfig::default() };
                let result = viper_train(&env.mdp, &env.features, &teacher, &q, &config).expect("viper");
                env.normalized(result.expected_return)
            })
            .sum::<f64>()
            / seeds.len() as f64;
        ok &= omdt >= viper;
        parts.push(format!("{name} omdt {omdt:.3} ({}) viper {viper:.3}", run.solved[i].status.as_str()));
    }
    let i = run.solve(EnvName::Xor, 2);
    let xor2 = run.solved[i].exact_return.map_or(f64::NAN, |j| run.envs[&EnvName::Xor].normalized(j));
    ok &= (xor2 - 1.0).abs() <= 0.01;
    parts.push(format!("xor depth 2 omdt {xor2:.3}"));
    run.report(7, ok, parts.join(", "));
}

fn heatmap_anchor(run: &mut Run) {
    let env = run.env(EnvName::FrozenLake12x12);
    let (_, policy) = value_iteration(&env.mdp, DEFAULT_VI_TOL, DEFAULT_VI_MAX_ITER).expect("value iteration");
    let exact = evaluate_policy_exact(&env.mdp, &policy).expect("evaluation").expected_return;
    let rate = path_heatmap(&env.mdp, &env.features, &policy, 10_000, 0).expect("heatmap").success_rate();
    let ok = (rate - 0.92).abs() <= 0.02;
    run.report(8, ok, format!("goal reached in {:.2}% of 10000 episodes, optimal return {exact:.4}", rate * 100.0));
}

fn property_suites(run: &mut Run) {
    let failures: Vec<String> =
        props::SUITES.iter().filter_map(|(label, suite)| suite().err().map(|e| format!("{label}: {e}"))).collect();
    let detail = if failures.is_empty() {
        format!("{} suites passed", props::SUITES.len())
    } else {
        failures.join("; ")
    };
    run.report(9, failures.is_empty(), detail);
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filtered runs expect no side effects.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let time_limit = std::env::var("OMDT_ACCEPTANCE_TIME_LIMIT")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_TIME_LIMIT);
    let mut run = Run { time_limit, envs: BTreeMap::new(), solved: Vec::new(), lines: Vec::new() };
    eprintln!("acceptance run, {time_limit}s per solve");

    model_sizes(&mut run);
    frozenlake_sweep(&mut run);
    oracle_equivalence(&mut run);
    viper_gap(&mut run);
    duality(&mut run);
    big_m_bound(&mut run);
    heatmap_anchor(&mut run);
    property_suites(&mut run);

    run.lines.sort_by_key(|l| l.0);
    for (criterion, passed, detail) in &run.lines {
        println!("criterion {criterion}: {} ({detail})", if *passed { "PASS" } else { "FAIL" });
    }
    let failed: Vec<usize> = run.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    println!("acceptance summary: {} of {} criteria passed", run.lines.len() - failed.len(), run.lines.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
