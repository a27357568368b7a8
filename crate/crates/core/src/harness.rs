//! Experiment orchestration: configured grids of (environment, method, depth,
//! seed) cells, persisted run directories, reports and path heatmaps.
//!
//! Layout of an output directory:
//!
//! ```text
//! <out>/envs/<env>/mdp.txt           MDP file shared by all cells of the environment
//! <out>/envs/<env>/anchors.json      random and optimal returns used for normalization
//! <out>/runs/<cell>/record.json      one RunRecord, written atomically
//! <out>/runs/<cell>/model.mps        OMDT cells only
//! <out>/runs/<cell>/tree.json        cells that produce a tree
//! <out>/records.csv                  every record, sorted by cell key
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{build_env, read_mdp_file, write_mdp_file, EnvError, EnvName, EnvSpec, FeatureMatrix};
use crate::mdp::{
    evaluate_policy_exact, normalized_return, simulate, value_iteration, DeterministicPolicy, MdpError, StochasticPolicy,
    TabularMdp, DEFAULT_MAX_STEPS, DEFAULT_VI_MAX_ITER, DEFAULT_VI_TOL,
};
use crate::milp::{build_omdt, extract_tree, solve, verify_solution, write_mps, BackendConfig, MilpError, SolveStatus};
use crate::mdp::q_from_values;
use crate::tree::{
    candidate_thresholds, deserialize_tree_for, enumerate_trees, serialize_tree, tree_to_policy, TreeError,
    DEFAULT_ENUMERATION_BUDGET,
};
use crate::viper::{fit_exact_policy_tree, viper_train, GrownTree, ViperConfig, ViperError};

/// Version tag of the records CSV column layout.
pub const RECORDS_SCHEMA: &str = "omdt-records/1";
/// Version tag of the report CSV column layout.
pub const REPORT_SCHEMA: &str = "omdt-report/1";
/// Version tag of the heatmap CSV layout.
pub const HEATMAP_SCHEMA: &str = "omdt-heatmap/1";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{0} has no `row` and `col` features")]
    NotGrid(String),
    #[error("record {key}: {msg}")]
    Record { key: String, msg: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Viper(#[from] ViperError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Omdt,
    Viper,
    Oracle,
    Vi,
    Random,
    ExactTree,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Omdt, Method::Viper, Method::Oracle, Method::Vi, Method::Random, Method::ExactTree];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Omdt => "omdt",
            Method::Viper => "viper",
            Method::Oracle => "oracle",
            Method::Vi => "vi",
            Method::Random => "random",
            Method::ExactTree => "exact-tree",
        }
    }

    /// Methods whose output does not depend on a depth limit.
    pub fn is_depth_free(self) -> bool {
        matches!(self, Method::Vi | Method::Random | Method::ExactTree)
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown method `{s}`")))
    }
}

fn default_time_limit() -> f64 {
    600.0
}

fn default_gap() -> f64 {
    crate::milp::DEFAULT_GAP
}

fn default_depths() -> Vec<usize> {
    vec![1, 2, 3]
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

/// Grid of cells to run. Loaded from TOML:
///
/// ```toml
/// envs = ["frozenlake_4x4", "xor"]
/// methods = ["omdt", "viper"]
/// depths = [1, 2, 3]
/// seeds = [0, 1, 2]
/// time_limit = 600.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub envs: Vec<String>,
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default = "default_depths")]
    pub depths: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_time_limit")]
    pub time_limit: f64,
    #[serde(default = "default_gap")]
    pub gap: f64,
    /// Generator seed for seeded environments, shared by every cell.
    #[serde(default)]
    pub env_seed: u64,
    #[serde(default)]
    pub viper_iterations: Option<usize>,
    #[serde(default)]
    pub viper_episodes: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text)?;
        config.env_names()?;
        if !(config.time_limit > 0.0) {
            return Err(HarnessError::Config(format!("time_limit must be positive, got {}", config.time_limit)));
        }
        Ok(config)
    }

    fn env_names(&self) -> Result<Vec<EnvName>, HarnessError> {
        self.envs.iter().map(|e| Ok(e.parse::<EnvName>()?)).collect()
    }

    /// Every cell in deterministic order; depth-free methods run once per seed.
    pub fn cells(&self) -> Result<Vec<Cell>, HarnessError> {
        let mut cells = Vec::new();
        for env in self.env_names()? {
            for &method in &self.methods {
                let depths: Vec<usize> = if method.is_depth_free() { vec![0] } else { self.depths.clone() };
                for &depth in &depths {
                    for &seed in &self.seeds {
                        cells.push(Cell { env, method, depth, seed });
                    }
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub env: EnvName,
    pub method: Method,
    pub depth: usize,
    pub seed: u64,
}

impl Cell {
    pub fn key(&self) -> String {
        format!("{}__{}__d{}__s{}", self.env, self.method.as_str(), self.depth, self.seed)
    }
}

/// Outcome of one cell. `objective` is always the exact expected return of
/// the produced policy; solver-reported values are kept separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub key: String,
    pub env: String,
    pub method: Method,
    pub depth: usize,
    pub seed: u64,
    pub time_limit: f64,
    /// `ok`, or a solver status, or `error`.
    pub status: String,
    pub objective: Option<f64>,
    pub normalized_return: Option<f64>,
    pub solver_objective: Option<f64>,
    pub bound: Option<f64>,
    pub gap: Option<f64>,
    pub wall_seconds: f64,
    pub n_variables: Option<usize>,
    pub n_constraints: Option<usize>,
    pub decision_nodes: Option<usize>,
    /// Relative to the output directory.
    pub tree_file: Option<String>,
    pub j_rand: f64,
    pub j_opt: f64,
    pub timestamp: String,
    pub error: Option<String>,
}

impl RunRecord {
    /// Whether the cell finished with a policy and need not be rerun.
    pub fn is_complete(&self) -> bool {
        self.objective.is_some() && self.error.is_none()
    }
}

/// Returns of the uniform-random policy and the unrestricted optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchors {
    pub j_rand: f64,
    pub j_opt: f64,
}

pub fn compute_anchors(mdp: &TabularMdp) -> Result<Anchors, MdpError> {
    let (v, _) = value_iteration(mdp, DEFAULT_VI_TOL, DEFAULT_VI_MAX_ITER)?;
    let random = StochasticPolicy::uniform(mdp.n_states, mdp.n_actions);
    Ok(Anchors { j_rand: evaluate_policy_exact(mdp, &random)?.expected_return, j_opt: v.expected_return(mdp) })
}

struct PreparedEnv {
    mdp: TabularMdp,
    features: FeatureMatrix,
    anchors: Anchors,
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn prepare_env(out: &Path, env: EnvName, env_seed: u64) -> Result<PreparedEnv, HarnessError> {
    let dir = out.join("envs").join(env.as_str());
    fs::create_dir_all(&dir)?;
    let mdp_path = dir.join("mdp.txt");
    let anchors_path = dir.join("anchors.json");
    let (mdp, features) = build_env(&EnvSpec::new(env).with_seed(env_seed))?;
    // Reuse the stored anchors only when they belong to the same MDP.
    if let (Ok((stored, _)), Ok(text)) = (read_mdp_file(&mdp_path), fs::read_to_string(&anchors_path)) {
        if stored == mdp {
            if let Ok(anchors) = serde_json::from_str(&text) {
                return Ok(PreparedEnv { mdp, features, anchors });
            }
        }
    }
    let anchors = compute_anchors(&mdp)?;
    write_mdp_file(&mdp, &features, &mdp_path)?;
    write_atomic(&anchors_path, &serde_json::to_string_pretty(&anchors)?)?;
    Ok(PreparedEnv { mdp, features, anchors })
}

/// Per-cell results before they become a record.
#[derive(Default)]
struct CellOutput {
    status: String,
    objective: Option<f64>,
    solver_objective: Option<f64>,
    bound: Option<f64>,
    gap: Option<f64>,
    n_variables: Option<usize>,
    n_constraints: Option<usize>,
    decision_nodes: Option<usize>,
    tree_file: Option<String>,
}

fn run_cell(
    out: &Path,
    cell: &Cell,
    env: &PreparedEnv,
    config: &ExperimentConfig,
    backend: &BackendConfig,
) -> Result<CellOutput, HarnessError> {
    let run_dir_rel = PathBuf::from("runs").join(cell.key());
    let run_dir = out.join(&run_dir_rel);
    fs::create_dir_all(&run_dir)?;
    let (mdp, features) = (&env.mdp, &env.features);
    let tree_rel = run_dir_rel.join("tree.json").to_string_lossy().into_owned();
    let exact = |policy: &DeterministicPolicy| evaluate_policy_exact(mdp, policy).map(|r| r.expected_return);
    let mut o = CellOutput { status: "ok".into(), ..Default::default() };
    match cell.method {
        Method::Omdt => {
            let omdt = build_omdt(mdp, features, cell.depth)?;
            o.n_variables = Some(omdt.model.variables.len());
            o.n_constraints = Some(omdt.model.constraints.len());
            write_mps(&omdt.model, run_dir.join("model.mps"))?;
            let cfg = BackendConfig {
                time_limit: config.time_limit,
                rel_gap: config.gap,
                seed: cell.seed,
                work_dir: backend.work_dir.as_ref().map(|_| run_dir.clone()),
                ..backend.clone()
            };
            let outcome = solve(&omdt.model, &cfg, None)?;
            o.status = outcome.status.as_str().to_string();
            o.bound = Some(outcome.best_bound);
            o.gap = Some(outcome.rel_gap);
            if let Some(values) = &outcome.values {
                let tree = extract_tree(&omdt, values)?;
                let report = verify_solution(mdp, features, &omdt, values, &tree)?;
                if let Some(failed) = report.failures().next() {
                    return Err(HarnessError::Record {
                        key: cell.key(),
                        msg: format!("check `{}` failed with error {:e}", failed.name, failed.error),
                    });
                }
                o.solver_objective = Some(report.solver_objective);
                o.objective = Some(report.exact_return);
                o.decision_nodes = Some(tree.splits().len());
                write_atomic(&out.join(&tree_rel), &serialize_tree(&tree, features.names(), mdp.action_labels.as_deref()))?;
                o.tree_file = Some(tree_rel);
            } else if outcome.status != SolveStatus::TimeLimit {
                return Err(HarnessError::Record { key: cell.key(), msg: "solver returned no incumbent".into() });
            }
        }
        Method::Oracle => {
            let thresholds = candidate_thresholds(features)?;
            let result = enumerate_trees(mdp, features, cell.depth, &thresholds, DEFAULT_ENUMERATION_BUDGET)?;
            o.objective = Some(result.expected_return);
            o.decision_nodes = Some(result.tree.splits().len());
            write_atomic(&out.join(&tree_rel), &serialize_tree(&result.tree, features.names(), mdp.action_labels.as_deref()))?;
            o.tree_file = Some(tree_rel);
        }
        Method::Viper => {
            let (v, teacher) = value_iteration(mdp, DEFAULT_VI_TOL, DEFAULT_VI_MAX_ITER)?;
            let q = q_from_values(mdp, &v);
            let defaults = ViperConfig::default();
            let vc = ViperConfig {
                depth: cell.depth,
                iterations: config.viper_iterations.unwrap_or(defaults.iterations),
                episodes_per_iteration: config.viper_episodes.unwrap_or(defaults.episodes_per_iteration),
                seed: cell.seed,
                ..defaults
            };
            let result = viper_train(mdp, features, &teacher, &q, &vc)?;
            o.objective = Some(exact(&tree_to_policy(&result.tree, features))?);
            o.decision_nodes = Some(result.tree.splits().len());
            write_atomic(&out.join(&tree_rel), &serialize_tree(&result.tree, features.names(), mdp.action_labels.as_deref()))?;
            o.tree_file = Some(tree_rel);
        }
        Method::ExactTree => {
            let (_, teacher) = value_iteration(mdp, DEFAULT_VI_TOL, DEFAULT_VI_MAX_ITER)?;
            let tree = fit_exact_policy_tree(features, &teacher)?;
            o.objective = Some(exact(&tree.to_policy(features))?);
            o.decision_nodes = Some(tree.n_decision_nodes());
            write_atomic(&out.join(&tree_rel), &serde_json::to_string_pretty(&tree)?)?;
            o.tree_file = Some(tree_rel);
        }
        Method::Vi => {
            let (_, policy) = value_iteration(mdp, DEFAULT_VI_TOL, DEFAULT_VI_MAX_ITER)?;
            o.objective = Some(exact(&policy)?);
        }
        Method::Random => {
            let random = StochasticPolicy::uniform(mdp.n_states, mdp.n_actions);
            o.objective = Some(evaluate_policy_exact(mdp, &random)?.expected_return);
        }
    }
    Ok(o)
}

fn record_path(out: &Path, key: &str) -> PathBuf {
    out.join("runs").join(key).join("record.json")
}

/// Runs every cell of `config` not already completed in `out`, then rewrites
/// `records.csv`. Failing cells are recorded with their error and the run
/// continues. `progress` is called after each cell.
pub fn run_experiment(
    config: &ExperimentConfig,
    out: &Path,
    backend: &BackendConfig,
    mut progress: impl FnMut(&RunRecord, bool),
) -> Result<Vec<RunRecord>, HarnessError> {
    let cells = config.cells()?;
    if cells.is_empty() {
        return Ok(Vec::new());
    }
    fs::create_dir_all(out.join("runs"))?;
    let mut prepared: BTreeMap<EnvName, PreparedEnv> = BTreeMap::new();
    let mut records = Vec::with_capacity(cells.len());
    for cell in &cells {
        let key = cell.key();
        let path = record_path(out, &key);
        if let Some(done) = fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str::<RunRecord>(&t).ok())
            .filter(RunRecord::is_complete)
        {
            progress(&done, true);
            records.push(done);
            continue;
        }
        if !prepared.contains_key(&cell.env) {
            prepared.insert(cell.env, prepare_env(out, cell.env, config.env_seed)?);
        }
        let env = &prepared[&cell.env];
        let clock = Instant::now();
        let result = run_cell(out, cell, env, config, backend);
        let wall_seconds = clock.elapsed().as_secs_f64();
        let (o, error) = match result {
            Ok(o) => (o, None),
            Err(e) => (CellOutput { status: "error".into(), ..Default::default() }, Some(e.to_string())),
        };
        let Anchors { j_rand, j_opt } = env.anchors;
        let record = RunRecord {
            key: key.clone(),
            env: cell.env.as_str().to_string(),
            method: cell.method,
            depth: cell.depth,
            seed: cell.seed,
            time_limit: config.time_limit,
            status: o.status,
            objective: o.objective,
            normalized_return: o.objective.and_then(|j| normalized_return(j, j_rand, j_opt).ok()),
            solver_objective: o.solver_objective,
            bound: o.bound,
            gap: o.gap,
            wall_seconds,
            n_variables: o.n_variables,
            n_constraints: o.n_constraints,
            decision_nodes: o.decision_nodes,
            tree_file: o.tree_file,
            j_rand,
            j_opt,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            error,
        };
        fs::create_dir_all(path.parent().expect("record path has a parent"))?;
        write_atomic(&path, &serde_json::to_string_pretty(&record)?)?;
        progress(&record, false);
        records.push(record);
    }
    records.sort_by(|a, b| a.key.cmp(&b.key));
    write_records_csv(&records, out.join("records.csv"))?;
    Ok(records)
}

/// Loads every `record.json` under `<out>/runs`, sorted by key.
pub fn load_records(out: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let mut records = Vec::new();
    let runs = out.join("runs");
    if !runs.exists() {
        return Ok(records);
    }
    for entry in fs::read_dir(runs)? {
        let path = entry?.path().join("record.json");
        if path.exists() {
            records.push(serde_json::from_str(&fs::read_to_string(&path)?)?);
        }
    }
    records.sort_by(|a: &RunRecord, b| a.key.cmp(&b.key));
    Ok(records)
}

pub fn write_records_csv(records: &[RunRecord], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv(path: impl AsRef<Path>) -> Result<Vec<RunRecord>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Re-evaluates a record's tree file and returns its exact expected return.
pub fn reevaluate_record(out: &Path, record: &RunRecord, mdp: &TabularMdp, features: &FeatureMatrix) -> Result<f64, HarnessError> {
    let Some(rel) = &record.tree_file else {
        return Err(HarnessError::Record { key: record.key.clone(), msg: "no tree file".into() });
    };
    let text = fs::read_to_string(out.join(rel))?;
    let policy = if record.method == Method::ExactTree {
        serde_json::from_str::<GrownTree>(&text)?.to_policy(features)
    } else {
        tree_to_policy(&deserialize_tree_for(&text, features, mdp.n_actions)?, features)
    };
    Ok(evaluate_policy_exact(mdp, &policy)?.expected_return)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(HarnessError::Config(format!("unknown report format `{other}`"))),
        }
    }
}

/// Mean and sample standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

#[derive(Default)]
struct Group {
    normalized: Vec<f64>,
    seconds: Vec<f64>,
}

struct Row {
    env: String,
    depth: usize,
    size: Option<(usize, usize)>,
    groups: BTreeMap<Method, Group>,
}

/// Table of completed records: one row per (environment, depth), one column
/// group per method with mean and standard deviation over seeds. Depth-free
/// methods appear in rows with depth `-`.
pub fn emit_report(records: &[RunRecord], format: ReportFormat) -> String {
    let mut rows: BTreeMap<(String, usize), Row> = BTreeMap::new();
    let mut methods: Vec<Method> = Vec::new();
    for r in records.iter().filter(|r| r.is_complete()) {
        let row = rows.entry((r.env.clone(), r.depth)).or_insert_with(|| Row {
            env: r.env.clone(),
            depth: r.depth,
            size: None,
            groups: BTreeMap::new(),
        });
        if let (Some(v), Some(c)) = (r.n_variables, r.n_constraints) {
            row.size.get_or_insert((v, c));
        }
        let g = row.groups.entry(r.method).or_default();
        if let Some(n) = r.normalized_return {
            g.normalized.push(n);
        }
        g.seconds.push(r.wall_seconds);
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods.sort();
    let depth_label = |d: usize| if d == 0 { "-".to_string() } else { d.to_string() };
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            let mut header = vec!["env".to_string(), "depth".into(), "variables".into(), "constraints".into()];
            for m in &methods {
                for col in ["n", "normalized_mean", "normalized_std", "seconds_mean", "seconds_std"] {
                    header.push(format!("{}_{col}", m.as_str()));
                }
            }
            let _ = writeln!(out, "{}", header.join(","));
            for row in rows.values() {
                let (v, c) = row.size.map_or((String::new(), String::new()), |(v, c)| (v.to_string(), c.to_string()));
                let mut cells = vec![row.env.clone(), depth_label(row.depth), v, c];
                for m in &methods {
                    match row.groups.get(m) {
                        Some(g) if !g.normalized.is_empty() => {
                            let (nm, ns) = mean_std(&g.normalized);
                            let (tm, ts) = mean_std(&g.seconds);
                            cells.extend([g.normalized.len().to_string(), format!("{nm:.6}"), format!("{ns:.6}"), format!("{tm:.3}"), format!("{ts:.3}")]);
                        }
                        _ => cells.extend(std::iter::repeat(String::new()).take(5)),
                    }
                }
                let _ = writeln!(out, "{}", cells.join(","));
            }
        }
        ReportFormat::Markdown => {
            let mut header = vec!["env", "depth", "vars", "constrs"].into_iter().map(String::from).collect::<Vec<_>>();
            for m in &methods {
                header.push(format!("{} normalized", m.as_str()));
                header.push(format!("{} time (s)", m.as_str()));
            }
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
            for row in rows.values() {
                let (v, c) = row.size.map_or(("".into(), "".into()), |(v, c)| (v.to_string(), c.to_string()));
                let mut cells = vec![row.env.clone(), depth_label(row.depth), v, c];
                for m in &methods {
                    match row.groups.get(m) {
                        Some(g) if !g.normalized.is_empty() => {
                            let (nm, ns) = mean_std(&g.normalized);
                            let (tm, ts) = mean_std(&g.seconds);
                            cells.push(format!("{nm:.3} ± {ns:.3}"));
                            cells.push(format!("{tm:.1} ± {ts:.1}"));
                        }
                        _ => cells.extend(["".to_string(), "".to_string()]),
                    }
                }
                let _ = writeln!(out, "| {} |", cells.join(" | "));
            }
        }
    }
    out
}

/// Per-cell counts of episodes that visited each grid position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    /// `visits[r][c]`: number of episodes that entered cell `(r, c)` at least once.
    pub visits: Vec<Vec<u64>>,
    pub episodes: usize,
    pub successes: usize,
}

impl Heatmap {
    /// Fraction of episodes that collected a positive reward.
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.episodes.max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.visits {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// Simulates `policy` and counts, per `(row, col)` feature cell, how many
/// episodes passed through it.
pub fn path_heatmap(
    mdp: &TabularMdp,
    features: &FeatureMatrix,
    policy: &DeterministicPolicy,
    episodes: usize,
    seed: u64,
) -> Result<Heatmap, HarnessError> {
    let (Some(ri), Some(ci)) = (features.feature_index("row"), features.feature_index("col")) else {
        return Err(HarnessError::NotGrid(mdp.name.clone()));
    };
    let coords: Vec<Option<(usize, usize)>> = (0..features.n_rows())
        .map(|s| {
            let (r, c) = (features.get(s, ri), features.get(s, ci));
            (r >= 0.0 && c >= 0.0 && r.fract() == 0.0 && c.fract() == 0.0).then_some((r as usize, c as usize))
        })
        .collect();
    let rows = coords.iter().flatten().map(|&(r, _)| r + 1).max().unwrap_or(0);
    let cols = coords.iter().flatten().map(|&(_, c)| c + 1).max().unwrap_or(0);
    let mut visits = vec![vec![0u64; cols]; rows];
    let sim = simulate(mdp, policy, seed, episodes, DEFAULT_MAX_STEPS)?;
    let mut successes = 0;
    for trace in &sim.traces {
        let mut seen = vec![false; rows * cols];
        for &s in &trace.states {
            if let Some((r, c)) = coords[s] {
                if !seen[r * cols + c] {
                    seen[r * cols + c] = true;
                    visits[r][c] += 1;
                }
            }
        }
        successes += usize::from(trace.collected_positive_reward());
    }
    Ok(Heatmap { rows, cols, visits, episodes, successes })
}
