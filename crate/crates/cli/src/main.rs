use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use omdt_core::envs::{build_env, read_mdp_file, write_mdp_file, EnvName, EnvSpec, FeatureMatrix};
use omdt_core::harness::{emit_report, load_records, path_heatmap, run_experiment, ExperimentConfig, ReportFormat};
use omdt_core::mdp::{
    estimate_return, evaluate_policy_exact, normalized_return, q_from_values, value_iteration, DeterministicPolicy,
    StochasticPolicy, TabularMdp, DEFAULT_MAX_STEPS, DEFAULT_VI_MAX_ITER, DEFAULT_VI_TOL,
};
use omdt_core::milp::{
    build_omdt, extract_tree, read_mps, solve, solve_linked, verify_solution, warm_start, write_mps, write_solution_file,
    Backend, BackendConfig, SolveStatus, DEFAULT_GAP, SOLVER_ENV_VAR,
};
use omdt_core::tree::{
    candidate_thresholds, count_tree_policies, deserialize_tree_for, enumerate_trees, serialize_tree, tree_to_dot,
    tree_to_policy, DEFAULT_ENUMERATION_BUDGET,
};
use omdt_core::viper::{fit_exact_policy_tree, viper_train, ViperConfig};

#[derive(Parser)]
#[command(name = "omdt", version, about = "Optimal decision-tree policies for tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or inspect environments.
    #[command(subcommand)]
    Env(EnvCommand),
    /// Compute a policy.
    #[command(subcommand)]
    Solve(SolveCommand),
    /// Brute-force the best tree of a given depth.
    Oracle {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 1)]
        depth: usize,
        /// Largest candidate space to enumerate.
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_BUDGET)]
        budget: f64,
        /// Write the tree as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a tree file exactly and by simulation.
    Eval {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        tree: PathBuf,
        #[arg(long, default_value_t = 0)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize the records of an experiment directory.
    Report {
        dir: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count grid cells visited by a policy.
    Heatmap {
        #[command(flatten)]
        source: Source,
        /// Tree to simulate; the optimal policy when omitted.
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write visit counts as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment grid from a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Solve an MPS file with the linked solver, following the external
    /// backend contract.
    Backend {
        model: PathBuf,
        solution: PathBuf,
        #[arg(long, default_value_t = 600.0)]
        time_limit: f64,
        #[arg(long, default_value_t = DEFAULT_GAP)]
        gap: f64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long = "option", value_name = "KEY=VALUE")]
        options: Vec<String>,
    },
}

#[derive(Subcommand)]
enum EnvCommand {
    /// Build an environment and write it as an MDP file.
    Build {
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generator parameter override.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also print the OMDT model size at this depth.
        #[arg(long, default_value_t = 3)]
        depth: usize,
    },
    /// List environment names.
    List,
}

#[derive(Subcommand)]
enum SolveCommand {
    /// Unrestricted optimum by value iteration.
    Vi {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = DEFAULT_VI_TOL)]
        tol: f64,
    },
    /// Optimal tree of a given depth via the mixed-integer program.
    Omdt {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[command(flatten)]
        solver: SolverArgs,
        /// Start from the best depth-1 tree found by enumeration.
        #[arg(long)]
        warm_start: bool,
        /// Directory for model.mps, solution.txt, tree.json and tree.dot.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Imitation-learning baseline.
    Viper {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 40)]
        iterations: usize,
        #[arg(long, default_value_t = 30)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Unbounded tree reproducing the optimal policy.
    ExactTree {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// An environment name or an MDP file.
#[derive(Args)]
struct Source {
    /// Environment name, or path to an MDP file.
    env: String,
    /// Generator seed for seeded environments.
    #[arg(long = "env-seed", default_value_t = 0)]
    env_seed: u64,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 600.0)]
    time_limit: f64,
    #[arg(long, default_value_t = DEFAULT_GAP)]
    gap: f64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Solver random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `linked`, or the path of an executable implementing the file contract.
    #[arg(long, env = SOLVER_ENV_VAR, default_value = "linked")]
    backend: String,
    /// Solver option passed through unchanged.
    #[arg(long = "option", value_name = "KEY=VALUE")]
    options: Vec<String>,
    /// Show the solver log.
    #[arg(long)]
    verbose: bool,
    /// Keep the solver's continuous values instead of re-solving the LP
    /// with the integral part fixed.
    #[arg(long)]
    no_polish: bool,
}

fn parse_pairs(pairs: &[String]) -> Result<Vec<(String, String)>> {
    pairs
        .iter()
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .with_context(|| format!("expected KEY=VALUE, got `{p}`"))
        })
        .collect()
}

impl SolverArgs {
    fn config(&self) -> Result<BackendConfig> {
        let backend = match self.backend.as_str() {
            "" | "linked" => Backend::Linked,
            path => Backend::External(PathBuf::from(path)),
        };
        Ok(BackendConfig {
            backend,
            time_limit: self.time_limit,
            rel_gap: self.gap,
            threads: self.threads,
            seed: self.seed,
            passthrough: parse_pairs(&self.options)?,
            verbose: self.verbose,
            work_dir: None,
            polish: !self.no_polish,
        })
    }
}

impl Source {
    fn load(&self) -> Result<(TabularMdp, FeatureMatrix)> {
        if let Ok(name) = self.env.parse::<EnvName>() {
            return Ok(build_env(&EnvSpec::new(name).with_seed(self.env_seed))?);
        }
        let path = Path::new(&self.env);
        if !path.exists() {
            bail!("`{}` is neither an environment name nor an existing MDP file", self.env);
        }
        read_mdp_file(path).with_context(|| format!("reading {}", path.display()))
    }
}

fn optimum(mdp: &TabularMdp) -> Result<(f64, f64, DeterministicPolicy)> {
    let (v, policy) = value_iteration(mdp, DEFAULT_VI_TOL, DEFAULT_VI_MAX_ITER)?;
    let random = evaluate_policy_exact(mdp, &StochasticPolicy::uniform(mdp.n_states, mdp.n_actions))?.expected_return;
    Ok((random, v.expected_return(mdp), policy))
}

/// Prints the return and its normalized value.
fn print_return(label: &str, j: f64, j_rand: f64, j_opt: f64) {
    match normalized_return(j, j_rand, j_opt) {
        Ok(n) => println!("{label}: {j:.6} (normalized {n:.4})"),
        Err(_) => println!("{label}: {j:.6}"),
    }
}

fn write_out(path: &Option<PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Env(EnvCommand::List) => {
            for name in EnvName::ALL {
                println!("{name}");
            }
        }
        Command::Env(EnvCommand::Build { name, seed, overrides, out, depth }) => {
            let mut spec = EnvSpec::new(name.parse()?).with_seed(seed);
            for (k, v) in parse_pairs(&overrides)? {
                spec = spec.with_override(k, v);
            }
            let (mdp, features) = build_env(&spec)?;
            let thresholds = candidate_thresholds(&features)?;
            let (vars, cons) = omdt_core::milp::omdt_size(mdp.n_states, mdp.n_actions, thresholds.total(), depth);
            println!("{}: {} states, {} actions, {} features", mdp.name, mdp.n_states, mdp.n_actions, features.n_features());
            println!("candidate thresholds: {}", thresholds.total());
            println!("depth {depth} model: {vars} variables, {cons} constraints");
            if let Some(out) = out {
                write_mdp_file(&mdp, &features, &out)?;
                println!("wrote {}", out.display());
            }
        }
        Command::Solve(SolveCommand::Vi { source, tol }) => {
            let (mdp, _) = source.load()?;
            let (v, policy) = value_iteration(&mdp, tol, DEFAULT_VI_MAX_ITER)?;
            let random = evaluate_policy_exact(&mdp, &StochasticPolicy::uniform(mdp.n_states, mdp.n_actions))?;
            println!("optimal return: {:.10}", v.expected_return(&mdp));
            println!("random return: {:.10}", random.expected_return);
            println!("bellman residual: {:.3e}", v.residual);
            println!("greedy policy return: {:.10}", evaluate_policy_exact(&mdp, &policy)?.expected_return);
        }
        Command::Solve(SolveCommand::Omdt { source, depth, solver, warm_start: warm, out }) => {
            let (mdp, features) = source.load()?;
            let (j_rand, j_opt, _) = optimum(&mdp)?;
            let omdt = build_omdt(&mdp, &features, depth)?;
            println!(
                "model: {} variables ({} binary), {} constraints",
                omdt.model.variables.len(),
                omdt.model.n_binaries(),
                omdt.model.constraints.len()
            );
            let mut config = solver.config()?;
            if let Some(dir) = &out {
                fs::create_dir_all(dir)?;
                write_mps(&omdt.model, dir.join("model.mps"))?;
                config.work_dir = Some(dir.clone());
            }
            let start = if warm {
                let thresholds = candidate_thresholds(&features)?;
                let mut tree = enumerate_trees(&mdp, &features, 1, &thresholds, DEFAULT_ENUMERATION_BUDGET)?.tree;
                while tree.depth() < depth {
                    tree = tree.deepen(tree.splits()[0])?;
                }
                Some(warm_start(&omdt, &tree, &mdp, &features)?)
            } else {
                None
            };
            let outcome = solve(&omdt.model, &config, start.as_deref())?;
            println!("status: {}", outcome.status.as_str());
            println!("bound: {:.6}  gap: {:.3e}  time: {:.2}s", outcome.best_bound, outcome.rel_gap, outcome.wall_seconds);
            let Some(values) = &outcome.values else {
                bail!("no feasible tree found within the time limit");
            };
            let tree = extract_tree(&omdt, values)?;
            let report = verify_solution(&mdp, &features, &omdt, values, &tree)?;
            println!("solver objective: {:.6}", report.solver_objective);
            print_return("tree return", report.exact_return, j_rand, j_opt);
            for check in &report.checks {
                println!("check {}: {} (error {:.2e})", check.name, if check.passed { "pass" } else { "FAIL" }, check.error);
            }
            let json = serialize_tree(&tree, features.names(), mdp.action_labels.as_deref());
            match &out {
                Some(dir) => {
                    write_solution_file(&omdt.model, &outcome, dir.join("solution.txt"))?;
                    fs::write(dir.join("tree.json"), &json)?;
                    fs::write(dir.join("tree.dot"), tree_to_dot(&tree, features.names(), mdp.action_labels.as_deref()))?;
                    println!("wrote {}", dir.display());
                }
                None => println!("{json}"),
            }
            if !report.passed() {
                bail!("solution failed verification");
            }
        }
        Command::Solve(SolveCommand::Viper { source, depth, iterations, episodes, seed, out }) => {
            let (mdp, features) = source.load()?;
            let (j_rand, j_opt, teacher) = optimum(&mdp)?;
            let (v, _) = value_iteration(&mdp, DEFAULT_VI_TOL, DEFAULT_VI_MAX_ITER)?;
            let q = q_from_values(&mdp, &v);
            let config = ViperConfig { depth, iterations, episodes_per_iteration: episodes, seed, ..ViperConfig::default() };
            let result = viper_train(&mdp, &features, &teacher, &q, &config)?;
            println!("best iteration: {} of {}", result.best_iteration + 1, result.history.len());
            print_return("tree return", result.expected_return, j_rand, j_opt);
            write_out(&out, &serialize_tree(&result.tree, features.names(), mdp.action_labels.as_deref()))?;
        }
        Command::Solve(SolveCommand::ExactTree { source, out }) => {
            let (mdp, features) = source.load()?;
            let (j_rand, j_opt, teacher) = optimum(&mdp)?;
            let tree = fit_exact_policy_tree(&features, &teacher)?;
            println!("decision nodes: {}, depth: {}", tree.n_decision_nodes(), tree.depth());
            print_return("tree return", evaluate_policy_exact(&mdp, &tree.to_policy(&features))?.expected_return, j_rand, j_opt);
            if let Some(out) = out {
                fs::write(out, serde_json::to_string_pretty(&tree)?)?;
            }
        }
        Command::Oracle { source, depth, budget, out } => {
            let (mdp, features) = source.load()?;
            let (j_rand, j_opt, _) = optimum(&mdp)?;
            let thresholds = candidate_thresholds(&features)?;
            println!("search space: 10^{:.2} trees", count_tree_policies(&thresholds, depth, mdp.n_actions));
            let result = enumerate_trees(&mdp, &features, depth, &thresholds, budget)?;
            println!("evaluated {} distinct policies", result.evaluated);
            print_return("best return", result.expected_return, j_rand, j_opt);
            write_out(&out, &serialize_tree(&result.tree, features.names(), mdp.action_labels.as_deref()))?;
        }
        Command::Eval { source, tree, episodes, seed } => {
            let (mdp, features) = source.load()?;
            let (j_rand, j_opt, _) = optimum(&mdp)?;
            let text = fs::read_to_string(&tree).with_context(|| format!("reading {}", tree.display()))?;
            let tree = deserialize_tree_for(&text, &features, mdp.n_actions)?;
            let policy = tree_to_policy(&tree, &features);
            print_return("exact return", evaluate_policy_exact(&mdp, &policy)?.expected_return, j_rand, j_opt);
            if episodes > 0 {
                let mc = estimate_return(&mdp, &policy, seed, episodes, DEFAULT_MAX_STEPS)?;
                if let omdt_core::mdp::EvalMethod::MonteCarlo { std_error, .. } = mc.method {
                    println!("simulated return: {:.6} ± {:.6} over {episodes} episodes", mc.expected_return, std_error);
                }
            }
        }
        Command::Report { dir, format, out } => {
            let records = load_records(&dir)?;
            if records.is_empty() {
                bail!("no records under {}", dir.display());
            }
            write_out(&out, &emit_report(&records, format.parse::<ReportFormat>()?))?;
        }
        Command::Heatmap { source, tree, episodes, seed, out } => {
            let (mdp, features) = source.load()?;
            let policy = match tree {
                Some(path) => {
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    tree_to_policy(&deserialize_tree_for(&text, &features, mdp.n_actions)?, &features)
                }
                None => optimum(&mdp)?.2,
            };
            let heatmap = path_heatmap(&mdp, &features, &policy, episodes, seed)?;
            println!("success rate: {:.2}% ({} of {})", 100.0 * heatmap.success_rate(), heatmap.successes, heatmap.episodes);
            write_out(&out, &heatmap.to_csv())?;
        }
        Command::Run { config, out, solver } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let config = ExperimentConfig::from_toml(&text)?;
            let backend = solver.config()?;
            let records = run_experiment(&config, &out, &backend, |r, resumed| {
                let what = if resumed { "done" } else { r.status.as_str() };
                match (&r.error, r.normalized_return) {
                    (Some(e), _) => eprintln!("{}: error: {e}", r.key),
                    (None, Some(n)) => eprintln!("{}: {what}, normalized {n:.4}, {:.1}s", r.key, r.wall_seconds),
                    (None, None) => eprintln!("{}: {what}, {:.1}s", r.key, r.wall_seconds),
                }
            })?;
            let failed = records.iter().filter(|r| r.error.is_some()).count();
            println!("{} records ({} failed) in {}", records.len(), failed, out.display());
        }
        Command::Backend { model, solution, time_limit, gap, threads, options } => {
            let model = read_mps(&model)?;
            let config = BackendConfig {
                time_limit,
                rel_gap: gap,
                threads,
                passthrough: parse_pairs(&options)?,
                ..BackendConfig::default()
            };
            let outcome = solve_linked(&model, &config, None)?;
            write_solution_file(&model, &outcome, &solution)?;
            if outcome.status == SolveStatus::Infeasible {
                eprintln!("model is infeasible");
            }
        }
    }
    Ok(())
}
