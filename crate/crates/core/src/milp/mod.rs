//! Mixed-integer formulation of optimal decision-tree policies.
//!
//! A complete tree of depth `D` is encoded by split indicators `b`, leaf
//! actions `c`, routing directions `d`, the induced deterministic policy `pi`
//! and its discounted occupancy measure `x`. Maximizing expected reward over
//! `x`, subject to the flow constraints of the dual linear program and the
//! requirement that `x` only uses the actions the tree selects, yields an
//! optimal tree policy.

mod mps;
mod solve;
mod verify;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::FeatureMatrix;
use crate::mdp::{validate, MdpError, TabularMdp};
use crate::tree::{candidate_thresholds, leaf_ancestors, n_decision_nodes, n_leaves, state_side, Split, ThresholdSet, TreeError, MAX_DEPTH};

pub use mps::{model_from_mps, model_to_mps, read_mps, write_mps};
pub use solve::{
    polish_solution, read_solution_file, solve, solve_linked, write_solution_file, Backend, BackendConfig, ProgressSample, SolveOutcome,
    SolveStatus, DEFAULT_GAP, INTEGRALITY_TOL, SOLVER_ENV_VAR,
};
pub use verify::{extract_tree, verify_solution, warm_start, CheckResult, Verification};

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("discount factor must lie in (0, 1), got {0}")]
    Gamma(f64),
    #[error("MDP has no states or actions")]
    EmptyMdp,
    #[error("MDP fails validation")]
    InvalidMdp,
    #[error("{0}")]
    Features(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("MPS line {line}: {msg}")]
    Mps { line: usize, msg: String },
    #[error("solution file line {line}: {msg}")]
    SolutionFile { line: usize, msg: String },
    #[error("solver failed: {0}")]
    Backend(String),
    #[error("model is infeasible; every fixed tree is feasible, so the formulation is broken")]
    Infeasible,
    #[error("solution has no value for {0}")]
    MissingValue(String),
    #[error("{what} {index}: {count} indicators are set")]
    Ambiguous { what: &'static str, index: usize, count: usize },
    #[error("variable {name} = {value} is not integral")]
    NotIntegral { name: String, value: f64 },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `M = 1 / (1 - gamma)`, the largest occupancy any state-action pair can have.
pub fn big_m(gamma: f64) -> Result<f64, MilpError> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(1.0 / (1.0 - gamma))
    } else {
        Err(MilpError::Gamma(gamma))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Binary,
    Integer,
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    /// `(variable index, coefficient)` sorted by index, no duplicates.
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpModel {
    pub name: String,
    pub maximize: bool,
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
}

impl MilpModel {
    pub fn new(name: impl Into<String>, maximize: bool) -> Self {
        Self { name: name.into(), maximize, variables: Vec::new(), constraints: Vec::new() }
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lower: f64, upper: f64, objective: f64) -> usize {
        self.variables.push(Variable { name: name.into(), kind, lower, upper, objective });
        self.variables.len() - 1
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> usize {
        self.add_var(name, VarKind::Binary, 0.0, 1.0, 0.0)
    }

    /// Adds a row; repeated variables are summed and zero coefficients dropped.
    pub fn add_constraint(&mut self, name: impl Into<String>, terms: impl IntoIterator<Item = (usize, f64)>, relation: Relation, rhs: f64) {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for (v, c) in terms {
            *merged.entry(v).or_insert(0.0) += c;
        }
        let terms = merged.into_iter().filter(|&(_, c)| c != 0.0).collect();
        self.constraints.push(Constraint { name: name.into(), terms, relation, rhs });
    }

    pub fn n_binaries(&self) -> usize {
        self.variables.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn n_nonzeros(&self) -> usize {
        self.constraints.iter().map(|c| c.terms.len()).sum()
    }

    pub fn var_index(&self) -> HashMap<&str, usize> {
        self.variables.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect()
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.variables.iter().zip(values).map(|(v, x)| v.objective * x).sum()
    }

    /// Largest violation of any row or bound by `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let rows = self.constraints.iter().map(|c| {
            let lhs: f64 = c.terms.iter().map(|&(v, a)| a * values[v]).sum();
            match c.relation {
                Relation::Le => (lhs - c.rhs).max(0.0),
                Relation::Ge => (c.rhs - lhs).max(0.0),
                Relation::Eq => (lhs - c.rhs).abs(),
            }
        });
        let bounds = self.variables.iter().zip(values).map(|(v, &x)| (v.lower - x).max(x - v.upper).max(0.0));
        rows.chain(bounds).fold(0.0, f64::max)
    }

    /// Checks unique names, term references and binary bounds.
    pub fn check(&self) -> Result<(), MilpError> {
        let mut names = std::collections::HashSet::new();
        for v in &self.variables {
            if !names.insert(v.name.as_str()) {
                return Err(MilpError::Model(format!("duplicate variable {}", v.name)));
            }
            if v.kind == VarKind::Binary && (v.lower != 0.0 || v.upper != 1.0) {
                return Err(MilpError::Model(format!("binary {} has bounds [{}, {}]", v.name, v.lower, v.upper)));
            }
            if v.lower > v.upper {
                return Err(MilpError::Model(format!("{} has empty domain", v.name)));
            }
        }
        let mut rows = std::collections::HashSet::new();
        for c in &self.constraints {
            if !rows.insert(c.name.as_str()) {
                return Err(MilpError::Model(format!("duplicate constraint {}", c.name)));
            }
            if let Some(&(v, _)) = c.terms.iter().find(|(v, _)| *v >= self.variables.len()) {
                return Err(MilpError::Model(format!("{} references undeclared variable {v}", c.name)));
            }
        }
        Ok(())
    }
}

/// Where each variable family lives in an OMDT model.
#[derive(Debug, Clone, PartialEq)]
pub struct OmdtLayout {
    pub depth: usize,
    pub n_states: usize,
    pub n_actions: usize,
    /// Split choices per node, ordered by feature then threshold.
    pub splits: Vec<Split>,
    pub gamma: f64,
    b_offset: usize,
    c_offset: usize,
    d_offset: usize,
    pi_offset: usize,
    x_offset: usize,
}

impl OmdtLayout {
    fn new(depth: usize, n_states: usize, n_actions: usize, splits: Vec<Split>, gamma: f64) -> Self {
        let b_offset = 0;
        let c_offset = b_offset + n_decision_nodes(depth) * splits.len();
        let d_offset = c_offset + n_leaves(depth) * n_actions;
        let pi_offset = d_offset + n_states * n_decision_nodes(depth);
        let x_offset = pi_offset + n_states * n_actions;
        Self { depth, n_states, n_actions, splits, gamma, b_offset, c_offset, d_offset, pi_offset, x_offset }
    }

    pub fn n_nodes(&self) -> usize {
        n_decision_nodes(self.depth)
    }

    pub fn n_leaves(&self) -> usize {
        n_leaves(self.depth)
    }

    pub fn n_variables(&self) -> usize {
        self.x_offset + self.n_states * self.n_actions
    }

    pub fn b(&self, node: usize, split: usize) -> usize {
        self.b_offset + node * self.splits.len() + split
    }

    pub fn c(&self, leaf: usize, action: usize) -> usize {
        self.c_offset + leaf * self.n_actions + action
    }

    pub fn d(&self, state: usize, node: usize) -> usize {
        self.d_offset + state * self.n_nodes() + node
    }

    pub fn pi(&self, state: usize, action: usize) -> usize {
        self.pi_offset + state * self.n_actions + action
    }

    pub fn x(&self, state: usize, action: usize) -> usize {
        self.x_offset + state * self.n_actions + action
    }
}

/// An OMDT model with the index layout needed to read solutions back.
#[derive(Debug, Clone, PartialEq)]
pub struct OmdtModel {
    pub model: MilpModel,
    pub layout: OmdtLayout,
}

/// Predicted model size `(variables, constraints)` without building it.
pub fn omdt_size(n_states: usize, n_actions: usize, sum_k: usize, depth: usize) -> (usize, usize) {
    let (nd, nl) = (n_decision_nodes(depth), n_leaves(depth));
    let vars = nd * sum_k + nl * n_actions + n_states * nd + 2 * n_states * n_actions;
    let cons = n_states + nd + n_states * nd + nl + n_states * n_actions * nl + n_states + n_states * n_actions;
    (vars, cons)
}

/// Builds the OMDT program with thresholds taken from the feature values.
pub fn build_omdt(mdp: &TabularMdp, features: &FeatureMatrix, depth: usize) -> Result<OmdtModel, MilpError> {
    let thresholds = candidate_thresholds(features)?;
    build_omdt_with(mdp, features, depth, &thresholds)
}

pub fn build_omdt_with(
    mdp: &TabularMdp,
    features: &FeatureMatrix,
    depth: usize,
    thresholds: &ThresholdSet,
) -> Result<OmdtModel, MilpError> {
    if depth == 0 || depth > MAX_DEPTH {
        return Err(TreeError::Depth(depth).into());
    }
    if mdp.n_states == 0 || mdp.n_actions == 0 {
        return Err(MilpError::EmptyMdp);
    }
    if !validate(mdp).is_empty() {
        return Err(MilpError::InvalidMdp);
    }
    if features.n_rows() != mdp.n_states {
        return Err(MilpError::Features(format!("{} feature rows for {} states", features.n_rows(), mdp.n_states)));
    }
    if thresholds.n_features() != features.n_features() || thresholds.counts().contains(&0) {
        return Err(MilpError::Features("threshold set does not match the feature matrix".into()));
    }
    let m_big = big_m(mdp.gamma)?;
    let (n_s, n_a) = (mdp.n_states, mdp.n_actions);
    let layout = OmdtLayout::new(depth, n_s, n_a, thresholds.splits(), mdp.gamma);
    let (nodes, leaves) = (layout.n_nodes(), layout.n_leaves());
    let mut model = MilpModel::new(format!("omdt_{}_d{depth}", mdp.name), true);

    for m in 0..nodes {
        for (j, &count) in thresholds.counts().iter().enumerate() {
            for k in 0..count {
                model.add_binary(format!("b_m{m}_f{j}_t{k}"));
            }
        }
    }
    for t in 0..leaves {
        for a in 0..n_a {
            model.add_binary(format!("c_l{t}_a{a}"));
        }
    }
    for s in 0..n_s {
        for m in 0..nodes {
            model.add_binary(format!("d_s{s}_m{m}"));
        }
    }
    for s in 0..n_s {
        for a in 0..n_a {
            model.add_binary(format!("pi_s{s}_a{a}"));
        }
    }
    for s in 0..n_s {
        for a in 0..n_a {
            model.add_var(format!("x_s{s}_a{a}"), VarKind::Continuous, 0.0, m_big, mdp.expected_reward(s, a));
        }
    }
    debug_assert_eq!(model.variables.len(), layout.n_variables());

    // Flow conservation of the occupancy measure.
    let mut inflow: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_s];
    for sp in 0..n_s {
        for a in 0..n_a {
            for t in mdp.row(sp, a) {
                inflow[t.next].push((layout.x(sp, a), -mdp.gamma * t.prob));
            }
        }
    }
    for (s, incoming) in inflow.into_iter().enumerate() {
        let own = (0..n_a).map(|a| (layout.x(s, a), 1.0));
        model.add_constraint(format!("flow_s{s}"), own.chain(incoming), Relation::Eq, mdp.p0[s]);
    }
    for m in 0..nodes {
        let terms = (0..layout.splits.len()).map(|i| (layout.b(m, i), 1.0));
        model.add_constraint(format!("onesplit_m{m}"), terms, Relation::Eq, 1.0);
    }
    for s in 0..n_s {
        let sides: Vec<u8> = layout.splits.iter().map(|&sp| state_side(features, s, sp)).collect();
        for m in 0..nodes {
            let terms = std::iter::once((layout.d(s, m), 1.0)).chain(
                sides.iter().enumerate().filter(|(_, &side)| side == 1).map(|(i, _)| (layout.b(m, i), -1.0)),
            );
            model.add_constraint(format!("dir_s{s}_m{m}"), terms, Relation::Eq, 0.0);
        }
    }
    for t in 0..leaves {
        let terms = (0..n_a).map(|a| (layout.c(t, a), 1.0));
        model.add_constraint(format!("oneact_l{t}"), terms, Relation::Eq, 1.0);
    }
    let ancestors: Vec<(Vec<usize>, Vec<usize>)> = (0..leaves).map(|t| leaf_ancestors(depth, t)).collect();
    for s in 0..n_s {
        for a in 0..n_a {
            for (t, (left, right)) in ancestors.iter().enumerate() {
                // Reaching leaf t and the leaf choosing a forces pi_{s,a} = 1.
                let terms = left
                    .iter()
                    .map(|&m| (layout.d(s, m), -1.0))
                    .chain(right.iter().map(|&m| (layout.d(s, m), 1.0)))
                    .chain([(layout.c(t, a), 1.0), (layout.pi(s, a), -1.0)]);
                model.add_constraint(format!("leafimp_s{s}_a{a}_l{t}"), terms, Relation::Le, right.len() as f64);
            }
        }
    }
    for s in 0..n_s {
        let terms = (0..n_a).map(|a| (layout.pi(s, a), 1.0));
        model.add_constraint(format!("onepol_s{s}"), terms, Relation::Eq, 1.0);
    }
    for s in 0..n_s {
        for a in 0..n_a {
            model.add_constraint(
                format!("gate_s{s}_a{a}"),
                [(layout.x(s, a), 1.0), (layout.pi(s, a), -m_big)],
                Relation::Le,
                0.0,
            );
        }
    }
    Ok(OmdtModel { model, layout })
}
