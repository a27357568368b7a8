//! Tabular Markov decision processes: representation, validation, reachability
//! pruning, value iteration, exact and Monte-Carlo policy evaluation.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::FeatureMatrix;

/// Tolerance used when checking that probability vectors sum to one.
pub const STOCHASTIC_TOL: f64 = 1e-9;
/// Default sup-norm tolerance for value iteration.
pub const DEFAULT_VI_TOL: f64 = 1e-10;
/// Default iteration cap for value iteration.
pub const DEFAULT_VI_MAX_ITER: usize = 1_000_000;
/// Default episode truncation for Monte-Carlo rollouts.
pub const DEFAULT_MAX_STEPS: usize = 1_000;

/// States above this count are evaluated iteratively instead of by a dense solve.
const DENSE_SOLVE_LIMIT: usize = 800;
const EVAL_TOL: f64 = 1e-12;
const EVAL_MAX_ITER: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("value iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("no state has positive initial probability")]
    NoInitialState,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate normalization: optimal and random returns are both {0}")]
    DegenerateNormalization(f64),
    #[error("invalid tolerance {0}")]
    InvalidTolerance(f64),
    #[error("singular policy evaluation system")]
    Singular,
}

/// One outcome of taking an action: successor state, probability and reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
}

/// Explicit finite MDP. Transition rows are stored densely by `(state, action)`
/// and sparsely over successor states.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub name: String,
    pub n_states: usize,
    pub n_actions: usize,
    /// Row `s * n_actions + a` lists the outcomes of action `a` in state `s`.
    pub transitions: Vec<Vec<Transition>>,
    pub p0: Vec<f64>,
    pub gamma: f64,
    pub state_labels: Option<Vec<String>>,
    pub action_labels: Option<Vec<String>>,
}

impl TabularMdp {
    #[inline]
    pub fn row(&self, state: usize, action: usize) -> &[Transition] {
        &self.transitions[state * self.n_actions + action]
    }

    /// Expected immediate reward of `action` in `state`.
    pub fn expected_reward(&self, state: usize, action: usize) -> f64 {
        self.row(state, action).iter().map(|t| t.prob * t.reward).sum()
    }

    /// A state is absorbing when every action loops back to it with certainty
    /// and zero reward.
    pub fn is_absorbing(&self, state: usize) -> bool {
        (0..self.n_actions).all(|a| {
            let row = self.row(state, a);
            row.len() == 1 && row[0].next == state && row[0].prob == 1.0 && row[0].reward == 0.0
        })
    }

    pub fn action_label(&self, action: usize) -> String {
        self.action_labels
            .as_ref()
            .and_then(|l| l.get(action).cloned())
            .unwrap_or_else(|| format!("a{action}"))
    }

    pub fn n_transitions(&self) -> usize {
        self.transitions.iter().map(Vec::len).sum()
    }
}

/// Incremental constructor that merges duplicate `(s, a, s')` entries.
///
/// Merged entries keep the probability-weighted mean reward so that expected
/// rewards and dynamics are unchanged.
#[derive(Debug, Clone)]
pub struct MdpBuilder {
    name: String,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rows: Vec<BTreeMap<usize, (f64, f64)>>,
    p0: Vec<f64>,
    state_labels: Option<Vec<String>>,
    action_labels: Option<Vec<String>>,
}

impl MdpBuilder {
    pub fn new(name: impl Into<String>, n_states: usize, n_actions: usize, gamma: f64) -> Self {
        Self {
            name: name.into(),
            n_states,
            n_actions,
            gamma,
            rows: vec![BTreeMap::new(); n_states * n_actions],
            p0: vec![0.0; n_states],
            state_labels: None,
            action_labels: None,
        }
    }

    pub fn add(&mut self, state: usize, action: usize, next: usize, prob: f64, reward: f64) -> &mut Self {
        if prob == 0.0 {
            return self;
        }
        let entry = self.rows[state * self.n_actions + action].entry(next).or_insert((0.0, 0.0));
        entry.0 += prob;
        entry.1 += prob * reward;
        self
    }

    /// Zero-reward self-loop for every action.
    pub fn absorbing(&mut self, state: usize) -> &mut Self {
        for a in 0..self.n_actions {
            self.add(state, a, state, 1.0, 0.0);
        }
        self
    }

    pub fn initial(&mut self, state: usize, prob: f64) -> &mut Self {
        self.p0[state] += prob;
        self
    }

    pub fn state_labels(&mut self, labels: Vec<String>) -> &mut Self {
        self.state_labels = Some(labels);
        self
    }

    pub fn action_labels(&mut self, labels: Vec<String>) -> &mut Self {
        self.action_labels = Some(labels);
        self
    }

    pub fn build(self) -> TabularMdp {
        let transitions = self
            .rows
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|(next, (prob, weighted))| Transition { next, prob, reward: weighted / prob })
                    .collect()
            })
            .collect();
        TabularMdp {
            name: self.name,
            n_states: self.n_states,
            n_actions: self.n_actions,
            transitions,
            p0: self.p0,
            gamma: self.gamma,
            state_labels: self.state_labels,
            action_labels: self.action_labels,
        }
    }
}

/// A broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RowSum { state: usize, action: usize, sum: f64 },
    EmptyRow { state: usize, action: usize },
    ProbabilityRange { state: usize, action: usize, next: usize, prob: f64 },
    SuccessorRange { state: usize, action: usize, next: usize },
    NonFiniteReward { state: usize, action: usize, next: usize },
    InitialSum { sum: f64 },
    InitialRange { state: usize, prob: f64 },
    InitialLength { len: usize },
    Gamma { gamma: f64 },
    RowCount { rows: usize, expected: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowSum { state, action, sum } => {
                write!(f, "transition row (s={state}, a={action}) sums to {sum}")
            }
            Violation::EmptyRow { state, action } => {
                write!(f, "transition row (s={state}, a={action}) is empty")
            }
            Violation::ProbabilityRange { state, action, next, prob } => {
                write!(f, "P({next} | s={state}, a={action}) = {prob} outside [0, 1]")
            }
            Violation::SuccessorRange { state, action, next } => {
                write!(f, "row (s={state}, a={action}) references unknown state {next}")
            }
            Violation::NonFiniteReward { state, action, next } => {
                write!(f, "non-finite reward on (s={state}, a={action}, s'={next})")
            }
            Violation::InitialSum { sum } => write!(f, "p0 sums to {sum}"),
            Violation::InitialRange { state, prob } => write!(f, "p0[{state}] = {prob} outside [0, 1]"),
            Violation::InitialLength { len } => write!(f, "p0 has length {len}"),
            Violation::Gamma { gamma } => write!(f, "gamma = {gamma} outside (0, 1)"),
            Violation::RowCount { rows, expected } => {
                write!(f, "{rows} transition rows, expected {expected}")
            }
        }
    }
}

/// Lists every broken [`TabularMdp`] invariant; empty when the MDP is well formed.
pub fn validate(mdp: &TabularMdp) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(mdp.gamma > 0.0 && mdp.gamma < 1.0) {
        out.push(Violation::Gamma { gamma: mdp.gamma });
    }
    let expected = mdp.n_states * mdp.n_actions;
    if mdp.transitions.len() != expected {
        out.push(Violation::RowCount { rows: mdp.transitions.len(), expected });
    } else {
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let row = mdp.row(s, a);
                if row.is_empty() {
                    out.push(Violation::EmptyRow { state: s, action: a });
                    continue;
                }
                let mut sum = 0.0;
                for t in row {
                    if t.next >= mdp.n_states {
                        out.push(Violation::SuccessorRange { state: s, action: a, next: t.next });
                    }
                    if !(0.0..=1.0).contains(&t.prob) || !t.prob.is_finite() {
                        out.push(Violation::ProbabilityRange { state: s, action: a, next: t.next, prob: t.prob });
                    }
                    if !t.reward.is_finite() {
                        out.push(Violation::NonFiniteReward { state: s, action: a, next: t.next });
                    }
                    sum += t.prob;
                }
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    out.push(Violation::RowSum { state: s, action: a, sum });
                }
            }
        }
    }
    if mdp.p0.len() != mdp.n_states {
        out.push(Violation::InitialLength { len: mdp.p0.len() });
    } else {
        for (s, &p) in mdp.p0.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                out.push(Violation::InitialRange { state: s, prob: p });
            }
        }
        let sum: f64 = mdp.p0.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            out.push(Violation::InitialSum { sum });
        }
    }
    out
}

/// Result of [`prune_unreachable`].
#[derive(Debug, Clone)]
pub struct Pruned {
    pub mdp: TabularMdp,
    pub features: FeatureMatrix,
    /// `index_map[old] = Some(new)` for kept states.
    pub index_map: Vec<Option<usize>>,
}

/// Drops states that cannot be reached from the initial distribution and
/// re-indexes the survivors densely, preserving their relative order.
pub fn prune_unreachable(mdp: &TabularMdp, features: &FeatureMatrix) -> Result<Pruned, MdpError> {
    if features.n_rows() != mdp.n_states {
        return Err(MdpError::DimensionMismatch(format!(
            "{} feature rows for {} states",
            features.n_rows(),
            mdp.n_states
        )));
    }
    let mut seen = vec![false; mdp.n_states];
    let mut queue = VecDeque::new();
    for (s, &p) in mdp.p0.iter().enumerate() {
        if p > 0.0 {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    if queue.is_empty() {
        return Err(MdpError::NoInitialState);
    }
    while let Some(s) = queue.pop_front() {
        for a in 0..mdp.n_actions {
            for t in mdp.row(s, a) {
                if t.prob > 0.0 && !seen[t.next] {
                    seen[t.next] = true;
                    queue.push_back(t.next);
                }
            }
        }
    }

    let mut index_map = vec![None; mdp.n_states];
    let mut kept = Vec::new();
    for s in 0..mdp.n_states {
        if seen[s] {
            index_map[s] = Some(kept.len());
            kept.push(s);
        }
    }

    let mut transitions = Vec::with_capacity(kept.len() * mdp.n_actions);
    for &s in &kept {
        for a in 0..mdp.n_actions {
            transitions.push(
                mdp.row(s, a)
                    .iter()
                    .filter(|t| t.prob > 0.0)
                    .map(|t| Transition { next: index_map[t.next].expect("successor reachable"), ..*t })
                    .collect(),
            );
        }
    }
    let pruned = TabularMdp {
        name: mdp.name.clone(),
        n_states: kept.len(),
        n_actions: mdp.n_actions,
        transitions,
        p0: kept.iter().map(|&s| mdp.p0[s]).collect(),
        gamma: mdp.gamma,
        state_labels: mdp.state_labels.as_ref().map(|l| kept.iter().map(|&s| l[s].clone()).collect()),
        action_labels: mdp.action_labels.clone(),
    };
    Ok(Pruned { mdp: pruned, features: features.select_rows(&kept), index_map })
}

/// Action probabilities per state.
pub trait Policy {
    fn n_states(&self) -> usize;
    /// Non-zero `(action, probability)` pairs for `state`.
    fn distribution(&self, state: usize) -> Vec<(usize, f64)>;

    fn sample<R: Rng>(&self, state: usize, rng: &mut R) -> usize {
        let dist = self.distribution(state);
        if dist.len() == 1 {
            return dist[0].0;
        }
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(a, p) in &dist {
            acc += p;
            if u < acc {
                return a;
            }
        }
        dist.last().map(|&(a, _)| a).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeterministicPolicy {
    pub action_of: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn new(action_of: Vec<usize>) -> Self {
        Self { action_of }
    }

    pub fn constant(n_states: usize, action: usize) -> Self {
        Self { action_of: vec![action; n_states] }
    }

    /// Indicator form: `pi[s][a] = 1` iff `action_of[s] == a`.
    pub fn indicator(&self, n_actions: usize) -> Vec<Vec<u8>> {
        self.action_of
            .iter()
            .map(|&chosen| (0..n_actions).map(|a| u8::from(a == chosen)).collect())
            .collect()
    }
}

impl Policy for DeterministicPolicy {
    fn n_states(&self) -> usize {
        self.action_of.len()
    }

    fn distribution(&self, state: usize) -> Vec<(usize, f64)> {
        vec![(self.action_of[state], 1.0)]
    }

    fn sample<R: Rng>(&self, state: usize, _rng: &mut R) -> usize {
        self.action_of[state]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    pub n_actions: usize,
    /// Row-major `state x action` probabilities.
    pub probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { n_actions, probs: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.probs[state * self.n_actions..(state + 1) * self.n_actions]
    }
}

impl Policy for StochasticPolicy {
    fn n_states(&self) -> usize {
        self.probs.len() / self.n_actions
    }

    fn distribution(&self, state: usize) -> Vec<(usize, f64)> {
        self.row(state).iter().copied().enumerate().filter(|&(_, p)| p > 0.0).collect()
    }
}

/// State values with the Bellman residual they were certified at.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub v: Vec<f64>,
    /// `max_s |V(s) - T(V)(s)|` at termination.
    pub residual: f64,
    pub tol: f64,
}

impl ValueFunction {
    /// `sum_s p0(s) V(s)`.
    pub fn expected_return(&self, mdp: &TabularMdp) -> f64 {
        mdp.p0.iter().zip(&self.v).map(|(p, v)| p * v).sum()
    }
}

/// Row-major `state x action` action values.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn greedy(&self) -> DeterministicPolicy {
        let n = self.values.len() / self.n_actions;
        DeterministicPolicy::new((0..n).map(|s| argmax_lowest(self.row(s))).collect())
    }
}

/// Index of the maximum, preferring the lowest index among near-equal values.
fn argmax_lowest(values: &[f64]) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = 1e-12 * (1.0 + max.abs());
    values.iter().position(|&q| q >= max - slack).unwrap_or(0)
}

fn backup(mdp: &TabularMdp, v: &[f64], state: usize, action: usize) -> f64 {
    mdp.row(state, action).iter().map(|t| t.prob * (t.reward + mdp.gamma * v[t.next])).sum()
}

/// Synchronous value iteration until `max_s |V(s) - T(V)(s)| < tol`.
pub fn value_iteration(
    mdp: &TabularMdp,
    tol: f64,
    max_iter: usize,
) -> Result<(ValueFunction, DeterministicPolicy), MdpError> {
    if !(tol > 0.0) {
        return Err(MdpError::InvalidTolerance(tol));
    }
    let mut v = vec![0.0; mdp.n_states];
    let mut next = vec![0.0; mdp.n_states];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        residual = 0.0;
        for s in 0..mdp.n_states {
            let best = (0..mdp.n_actions).map(|a| backup(mdp, &v, s, a)).fold(f64::NEG_INFINITY, f64::max);
            residual = f64::max(residual, (best - v[s]).abs());
            next[s] = best;
        }
        if residual < tol {
            let vf = ValueFunction { v, residual, tol };
            let policy = q_from_values(mdp, &vf).greedy();
            return Ok((vf, policy));
        }
        std::mem::swap(&mut v, &mut next);
    }
    Err(MdpError::NotConverged { iterations: max_iter, residual })
}

/// `Q(s,a) = sum_s' P(s'|s,a) (R(s,s',a) + gamma V(s'))`.
pub fn q_from_values(mdp: &TabularMdp, v: &ValueFunction) -> QTable {
    let mut values = Vec::with_capacity(mdp.n_states * mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            values.push(backup(mdp, &v.v, s, a));
        }
    }
    QTable { n_actions: mdp.n_actions, values }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum EvalMethod {
    Exact,
    MonteCarlo { episodes: usize, std_error: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub expected_return: f64,
    #[serde(flatten)]
    pub method: EvalMethod,
}

fn check_policy_dims<P: Policy>(mdp: &TabularMdp, policy: &P) -> Result<(), MdpError> {
    if policy.n_states() != mdp.n_states {
        return Err(MdpError::DimensionMismatch(format!(
            "policy covers {} states, MDP has {}",
            policy.n_states(),
            mdp.n_states
        )));
    }
    Ok(())
}

/// Policy-induced transition rows `(next, prob)` and expected rewards.
fn policy_chain<P: Policy>(mdp: &TabularMdp, policy: &P) -> (Vec<Vec<(usize, f64)>>, Vec<f64>) {
    let mut rows = Vec::with_capacity(mdp.n_states);
    let mut rewards = Vec::with_capacity(mdp.n_states);
    for s in 0..mdp.n_states {
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        let mut r = 0.0;
        for (a, pa) in policy.distribution(s) {
            for t in mdp.row(s, a) {
                *merged.entry(t.next).or_insert(0.0) += pa * t.prob;
                r += pa * t.prob * t.reward;
            }
        }
        rows.push(merged.into_iter().collect());
        rewards.push(r);
    }
    (rows, rewards)
}

/// Solves `(I - gamma P) y = b`, or its transpose, for the policy chain.
fn solve_chain(
    gamma: f64,
    rows: &[Vec<(usize, f64)>],
    rhs: &[f64],
    transpose: bool,
) -> Result<Vec<f64>, MdpError> {
    let n = rows.len();
    if n <= DENSE_SOLVE_LIMIT {
        let mut a = DMatrix::<f64>::identity(n, n);
        for (s, row) in rows.iter().enumerate() {
            for &(next, p) in row {
                if transpose {
                    a[(next, s)] -= gamma * p;
                } else {
                    a[(s, next)] -= gamma * p;
                }
            }
        }
        let b = DVector::from_column_slice(rhs);
        return a.lu().solve(&b).map(|x| x.as_slice().to_vec()).ok_or(MdpError::Singular);
    }
    if transpose {
        // Iterate y = b + gamma P^T y using the transposed adjacency.
        let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (s, row) in rows.iter().enumerate() {
            for &(next, p) in row {
                incoming[next].push((s, p));
            }
        }
        return gauss_seidel(gamma, &incoming, rhs);
    }
    gauss_seidel(gamma, rows, rhs)
}

fn gauss_seidel(gamma: f64, rows: &[Vec<(usize, f64)>], rhs: &[f64]) -> Result<Vec<f64>, MdpError> {
    let n = rows.len();
    let mut y = rhs.to_vec();
    for _ in 0..EVAL_MAX_ITER {
        for s in 0..n {
            let mut acc = rhs[s];
            let mut diag = 0.0;
            for &(next, p) in &rows[s] {
                if next == s {
                    diag += gamma * p;
                } else {
                    acc += gamma * p * y[next];
                }
            }
            y[s] = acc / (1.0 - diag);
        }
        let residual = (0..n)
            .map(|s| {
                let ty = rhs[s] + rows[s].iter().map(|&(next, p)| gamma * p * y[next]).sum::<f64>();
                (ty - y[s]).abs()
            })
            .fold(0.0, f64::max);
        if residual < EVAL_TOL {
            return Ok(y);
        }
    }
    Err(MdpError::NotConverged { iterations: EVAL_MAX_ITER, residual: f64::NAN })
}

/// State values `V_pi` of an arbitrary policy.
pub fn policy_values<P: Policy>(mdp: &TabularMdp, policy: &P) -> Result<Vec<f64>, MdpError> {
    check_policy_dims(mdp, policy)?;
    let (rows, rewards) = policy_chain(mdp, policy);
    solve_chain(mdp.gamma, &rows, &rewards, false)
}

/// Exact expected discounted return `sum_s p0(s) V_pi(s)`.
pub fn evaluate_policy_exact<P: Policy>(mdp: &TabularMdp, policy: &P) -> Result<EvalReport, MdpError> {
    let v = policy_values(mdp, policy)?;
    let expected_return = mdp.p0.iter().zip(&v).map(|(p, v)| p * v).sum();
    Ok(EvalReport { expected_return, method: EvalMethod::Exact })
}

/// Discounted state-action occupancy `x[s * n_actions + a]` of a policy,
/// the quantity the dual linear program optimizes over.
pub fn occupancy_measure<P: Policy>(mdp: &TabularMdp, policy: &P) -> Result<Vec<f64>, MdpError> {
    check_policy_dims(mdp, policy)?;
    let (rows, _) = policy_chain(mdp, policy);
    let state_occ = solve_chain(mdp.gamma, &rows, &mdp.p0, true)?;
    let mut x = vec![0.0; mdp.n_states * mdp.n_actions];
    for s in 0..mdp.n_states {
        for (a, pa) in policy.distribution(s) {
            x[s * mdp.n_actions + a] = state_occ[s] * pa;
        }
    }
    Ok(x)
}

/// Visited states and rewards of one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub episode: usize,
    pub states: Vec<usize>,
    pub rewards: Vec<f64>,
    pub discounted_return: f64,
}

impl Trace {
    pub fn collected_positive_reward(&self) -> bool {
        self.rewards.iter().any(|&r| r > 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub report: EvalReport,
    pub traces: Vec<Trace>,
}

fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    rng
}

fn sample_initial<R: Rng>(mdp: &TabularMdp, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (s, &p) in mdp.p0.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = s;
            if u < acc {
                return s;
            }
        }
    }
    last
}

fn sample_transition<R: Rng>(row: &[Transition], rng: &mut R) -> Transition {
    if row.len() == 1 {
        return row[0];
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for t in row {
        acc += t.prob;
        if u < acc {
            return *t;
        }
    }
    *row.last().expect("non-empty transition row")
}

/// Runs one episode. Stops early on absorbing states, whose future return is zero.
fn rollout<P: Policy>(
    mdp: &TabularMdp,
    policy: &P,
    absorbing: &[bool],
    seed: u64,
    episode: usize,
    max_steps: usize,
    record: bool,
) -> Trace {
    let mut rng = episode_rng(seed, episode);
    let mut state = sample_initial(mdp, &mut rng);
    let mut states = Vec::new();
    let mut rewards = Vec::new();
    let mut ret = 0.0;
    let mut discount = 1.0;
    if record {
        states.push(state);
    }
    for _ in 0..max_steps {
        if absorbing[state] {
            break;
        }
        let action = policy.sample(state, &mut rng);
        let t = sample_transition(mdp.row(state, action), &mut rng);
        ret += discount * t.reward;
        discount *= mdp.gamma;
        state = t.next;
        if record {
            states.push(state);
            rewards.push(t.reward);
        }
    }
    Trace { episode, states, rewards, discounted_return: ret }
}

fn summarize(returns: &[f64], seed: u64) -> EvalReport {
    let n = returns.len();
    let mean = returns.iter().sum::<f64>() / n.max(1) as f64;
    let var = if n > 1 {
        returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    EvalReport {
        expected_return: mean,
        method: EvalMethod::MonteCarlo { episodes: n, std_error: (var / n.max(1) as f64).sqrt(), seed },
    }
}

/// Seeded Monte-Carlo rollouts with per-episode traces.
///
/// Episode `i` draws from its own stream derived from `(seed, i)`, so results do
/// not depend on evaluation order.
pub fn simulate<P: Policy>(
    mdp: &TabularMdp,
    policy: &P,
    seed: u64,
    episodes: usize,
    max_steps: usize,
) -> Result<Simulation, MdpError> {
    check_policy_dims(mdp, policy)?;
    let absorbing: Vec<bool> = (0..mdp.n_states).map(|s| mdp.is_absorbing(s)).collect();
    let traces: Vec<Trace> = (0..episodes)
        .map(|i| rollout(mdp, policy, &absorbing, seed, i, max_steps.max(1), true))
        .collect();
    let returns: Vec<f64> = traces.iter().map(|t| t.discounted_return).collect();
    Ok(Simulation { report: summarize(&returns, seed), traces })
}

/// Monte-Carlo estimate of the expected return without keeping traces.
pub fn estimate_return<P: Policy>(
    mdp: &TabularMdp,
    policy: &P,
    seed: u64,
    episodes: usize,
    max_steps: usize,
) -> Result<EvalReport, MdpError> {
    check_policy_dims(mdp, policy)?;
    let absorbing: Vec<bool> = (0..mdp.n_states).map(|s| mdp.is_absorbing(s)).collect();
    let returns: Vec<f64> = (0..episodes)
        .map(|i| rollout(mdp, policy, &absorbing, seed, i, max_steps.max(1), false).discounted_return)
        .collect();
    Ok(summarize(&returns, seed))
}

/// Affine rescaling with 0 at the random policy and 1 at the optimum.
pub fn normalized_return(j: f64, j_rand: f64, j_opt: f64) -> Result<f64, MdpError> {
    let span = j_opt - j_rand;
    if span == 0.0 {
        return Err(MdpError::DegenerateNormalization(j_opt));
    }
    Ok((j - j_rand) / span)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn self_loop(reward: f64, gamma: f64) -> TabularMdp {
        let mut b = MdpBuilder::new("loop", 1, 1, gamma);
        b.add(0, 0, 0, 1.0, reward).initial(0, 1.0);
        b.build()
    }

    fn chain() -> TabularMdp {
        // 0 --(+1)--> 1 (absorbing)
        let mut b = MdpBuilder::new("chain", 2, 1, 0.9);
        b.add(0, 0, 1, 1.0, 1.0).absorbing(1).initial(0, 1.0);
        b.build()
    }

    fn one_feature(n: usize) -> FeatureMatrix {
        FeatureMatrix::new(vec!["i".into()], (0..n).map(|i| vec![i as f64]).collect()).unwrap()
    }

    #[test]
    fn well_formed_chain_validates() {
        assert!(validate(&chain()).is_empty());
    }

    #[test]
    fn short_row_is_reported() {
        let mut mdp = chain();
        mdp.transitions[0][0].prob = 0.9;
        let v = validate(&mdp);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::RowSum { state: 0, action: 0, .. }));
        assert!(v[0].to_string().contains("s=0, a=0"));
    }

    #[test]
    fn heavy_initial_distribution_is_reported() {
        let mut mdp = chain();
        mdp.p0 = vec![1.0, 0.5];
        let v = validate(&mdp);
        assert_eq!(v, vec![Violation::InitialSum { sum: 1.5 }]);
        assert!(v[0].to_string().contains("p0"));
    }

    #[test]
    fn gamma_outside_unit_interval_is_reported() {
        let mut mdp = chain();
        mdp.gamma = 1.0;
        assert_eq!(validate(&mdp), vec![Violation::Gamma { gamma: 1.0 }]);
    }

    #[test]
    fn builder_merges_duplicate_successors() {
        let mut b = MdpBuilder::new("m", 2, 1, 0.5);
        b.add(0, 0, 1, 0.25, 4.0).add(0, 0, 1, 0.75, 0.0).absorbing(1).initial(0, 1.0);
        let mdp = b.build();
        assert_eq!(mdp.row(0, 0).len(), 1);
        assert!((mdp.expected_reward(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn isolated_state_is_pruned() {
        let mut b = MdpBuilder::new("iso", 3, 1, 0.9);
        b.add(0, 0, 1, 1.0, 0.0).absorbing(1).absorbing(2).initial(0, 1.0);
        let mdp = b.build();
        let pruned = prune_unreachable(&mdp, &one_feature(3)).unwrap();
        assert_eq!(pruned.mdp.n_states, 2);
        assert_eq!(pruned.index_map, vec![Some(0), Some(1), None]);
        assert_eq!(pruned.features.row(1), &[1.0]);
        assert!(validate(&pruned.mdp).is_empty());
    }

    #[test]
    fn reachable_mdp_prunes_to_identity() {
        let pruned = prune_unreachable(&chain(), &one_feature(2)).unwrap();
        assert_eq!(pruned.index_map, vec![Some(0), Some(1)]);
        assert_eq!(pruned.mdp, chain());
    }

    #[test]
    fn pruning_needs_an_initial_state() {
        let mut mdp = chain();
        mdp.p0 = vec![0.0, 0.0];
        assert_eq!(prune_unreachable(&mdp, &one_feature(2)).unwrap_err(), MdpError::NoInitialState);
    }

    #[test]
    fn self_loop_value_is_geometric_series() {
        let mdp = self_loop(1.0, 0.99);
        let (v, pi) = value_iteration(&mdp, 1e-10, DEFAULT_VI_MAX_ITER).unwrap();
        assert!((v.v[0] - 100.0).abs() < 1e-7);
        assert!(v.residual < 1e-10);
        assert_eq!(pi.action_of, vec![0]);
        let q = q_from_values(&mdp, &v);
        assert!((q.values[0] - 100.0).abs() < 1e-7);
    }

    #[test]
    fn absorbing_state_has_zero_value() {
        let (v, _) = value_iteration(&chain(), 1e-10, 1000).unwrap();
        assert_eq!(v.v[1], 0.0);
        assert!((v.v[0] - 1.0).abs() < 1e-12);
        let q = q_from_values(&chain(), &v);
        assert_eq!(q.row(1), &[0.0]);
    }

    #[test]
    fn value_iteration_reports_non_convergence() {
        let err = value_iteration(&self_loop(1.0, 0.99), 1e-10, 10).unwrap_err();
        match err {
            MdpError::NotConverged { iterations, residual } => {
                assert_eq!(iterations, 10);
                assert!(residual > 0.1);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(value_iteration(&chain(), 0.0, 10).is_err());
    }

    #[test]
    fn greedy_ties_prefer_lowest_action() {
        let mut b = MdpBuilder::new("tie", 1, 3, 0.5);
        for a in 0..3 {
            b.add(0, a, 0, 1.0, 1.0);
        }
        b.initial(0, 1.0);
        let (_, pi) = value_iteration(&b.build(), 1e-12, 1000).unwrap();
        assert_eq!(pi.action_of, vec![0]);
    }

    #[test]
    fn one_step_reward_then_absorb_returns_one() {
        let report = evaluate_policy_exact(&chain(), &DeterministicPolicy::constant(2, 0)).unwrap();
        assert!((report.expected_return - 1.0).abs() < 1e-12);
        assert_eq!(report.method, EvalMethod::Exact);
    }

    #[test]
    fn uniform_policy_on_single_action_loop() {
        let mdp = self_loop(1.0, 0.99);
        let report = evaluate_policy_exact(&mdp, &StochasticPolicy::uniform(1, 1)).unwrap();
        assert!((report.expected_return - 100.0).abs() < 1e-9);
    }

    #[test]
    fn policy_dimension_mismatch_is_an_error() {
        let err = evaluate_policy_exact(&chain(), &DeterministicPolicy::constant(3, 0)).unwrap_err();
        assert!(matches!(err, MdpError::DimensionMismatch(_)));
    }

    #[test]
    fn occupancy_of_self_loop_is_big_m() {
        let x = occupancy_measure(&self_loop(0.0, 0.99), &DeterministicPolicy::constant(1, 0)).unwrap();
        assert!((x[0] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_path_mc_equals_exact() {
        let mdp = chain();
        let pi = DeterministicPolicy::constant(2, 0);
        let sim = simulate(&mdp, &pi, 7, 10, 100).unwrap();
        assert_eq!(sim.report.expected_return, 1.0);
        assert_eq!(sim.traces[0].states, vec![0, 1]);
        match sim.report.method {
            EvalMethod::MonteCarlo { episodes, std_error, seed } => {
                assert_eq!((episodes, seed), (10, 7));
                assert_eq!(std_error, 0.0);
            }
            EvalMethod::Exact => panic!("expected Monte-Carlo report"),
        }
    }

    #[test]
    fn same_seed_same_traces() {
        let mut b = MdpBuilder::new("coin", 2, 1, 0.9);
        b.add(0, 0, 0, 0.5, 1.0).add(0, 0, 1, 0.5, 0.0).absorbing(1).initial(0, 1.0);
        let mdp = b.build();
        let pi = DeterministicPolicy::constant(2, 0);
        let a = simulate(&mdp, &pi, 42, 50, 30).unwrap();
        let b = simulate(&mdp, &pi, 42, 50, 30).unwrap();
        assert_eq!(a.traces, b.traces);
        let c = simulate(&mdp, &pi, 43, 50, 30).unwrap();
        assert_ne!(a.traces, c.traces);
        let est = estimate_return(&mdp, &pi, 42, 50, 30).unwrap();
        assert_eq!(est, a.report);
    }

    #[test]
    fn normalization_anchors() {
        assert_eq!(normalized_return(0.8, 0.2, 0.8).unwrap(), 1.0);
        assert_eq!(normalized_return(0.2, 0.2, 0.8).unwrap(), 0.0);
        assert!(normalized_return(0.1, 0.2, 0.8).unwrap() < 0.0);
        assert_eq!(normalized_return(0.5, 0.3, 0.3).unwrap_err(), MdpError::DegenerateNormalization(0.3));
    }
}
