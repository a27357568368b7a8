//! Imitation-learning baseline: VIPER-style dataset aggregation with a
//! Q-weighted greedy tree learner, plus an unbounded tree that reproduces a
//! policy exactly.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::FeatureMatrix;
use crate::mdp::{evaluate_policy_exact, simulate, DeterministicPolicy, MdpError, QTable, TabularMdp};
use crate::tree::{n_decision_nodes, n_leaves, side, DecisionTree, Split, TreeError, MAX_DEPTH};

#[derive(Debug, Error)]
pub enum ViperError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("row {row} has invalid weight {weight}")]
    InvalidWeight { row: usize, weight: f64 },
    #[error("row {row} has {found} features, expected {expected}")]
    RowWidth { row: usize, found: usize, expected: usize },
    #[error("identical feature rows carry actions {first} and {second}; no tree separates them")]
    Inseparable { first: usize, second: usize },
    #[error("teacher and MDP disagree: {0}")]
    Teacher(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// Importance of imitating the teacher in a state: `max_a Q - min_a Q`.
pub fn viper_weight(q_row: &[f64]) -> f64 {
    let max = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = q_row.iter().copied().fold(f64::INFINITY, f64::min);
    if q_row.is_empty() {
        0.0
    } else {
        max - min
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightedDataset {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
}

impl WeightedDataset {
    pub fn push(&mut self, row: Vec<f64>, label: usize, weight: f64) {
        self.rows.push(row);
        self.labels.push(label);
        self.weights.push(weight);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn check(&self) -> Result<usize, ViperError> {
        let width = self.rows.first().ok_or(ViperError::EmptyDataset)?.len();
        for (row, (r, &weight)) in self.rows.iter().zip(&self.weights).enumerate() {
            if r.len() != width {
                return Err(ViperError::RowWidth { row, found: r.len(), expected: width });
            }
            if !(weight.is_finite() && weight >= 0.0) {
                return Err(ViperError::InvalidWeight { row, weight });
            }
        }
        Ok(width)
    }
}

/// Identical `(row, label)` pairs merged, with summed weight and multiplicity.
struct Compact {
    rows: Vec<Vec<f64>>,
    labels: Vec<usize>,
    weights: Vec<f64>,
    counts: Vec<f64>,
    n_labels: usize,
}

fn compact(data: &WeightedDataset) -> Compact {
    let mut index: HashMap<(Vec<u64>, usize), usize> = HashMap::new();
    let mut c = Compact { rows: Vec::new(), labels: Vec::new(), weights: Vec::new(), counts: Vec::new(), n_labels: 0 };
    for ((row, &label), &w) in data.rows.iter().zip(&data.labels).zip(&data.weights) {
        let key = (row.iter().map(|v| v.to_bits()).collect(), label);
        let i = *index.entry(key).or_insert_with(|| {
            c.rows.push(row.clone());
            c.labels.push(label);
            c.weights.push(0.0);
            c.counts.push(0.0);
            c.rows.len() - 1
        });
        c.weights[i] += w;
        c.counts[i] += 1.0;
        c.n_labels = c.n_labels.max(label + 1);
    }
    c
}

fn gini(mass: &[f64]) -> f64 {
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - mass.iter().map(|m| (m / total).powi(2)).sum::<f64>()
}

impl Compact {
    fn mass(&self, idx: &[usize], weighted: bool) -> Vec<f64> {
        let mut mass = vec![0.0; self.n_labels];
        for &i in idx {
            mass[self.labels[i]] += if weighted { self.weights[i] } else { self.counts[i] };
        }
        mass
    }

    /// Weighted majority label; multiplicity breaks ties, then the lower index.
    fn majority(&self, idx: &[usize]) -> usize {
        let (w, n) = (self.mass(idx, true), self.mass(idx, false));
        (0..self.n_labels).fold(0, |best, a| if (w[a], n[a]) > (w[best], n[best]) { a } else { best })
    }

    /// Impurity on weights, or on multiplicities when all weights are zero.
    fn impurity_mass(&self, idx: &[usize]) -> (Vec<f64>, bool) {
        let w = self.mass(idx, true);
        if w.iter().sum::<f64>() > 0.0 {
            (w, true)
        } else {
            (self.mass(idx, false), false)
        }
    }

    fn is_pure(&self, idx: &[usize]) -> bool {
        idx.iter().all(|&i| self.labels[i] == self.labels[idx[0]])
    }

    /// Split minimizing the children's summed weighted Gini impurity.
    /// Features and thresholds are scanned in ascending order and the first
    /// minimum wins.
    fn best_split(&self, idx: &[usize], n_features: usize) -> Option<Split> {
        if idx.len() < 2 {
            return None;
        }
        let (_, weighted) = self.impurity_mass(idx);
        let w = |i: usize| if weighted { self.weights[i] } else { self.counts[i] };
        let mut best: Option<(f64, Split)> = None;
        for j in 0..n_features {
            let mut order: Vec<usize> = idx.to_vec();
            order.sort_by(|&a, &b| self.rows[a][j].total_cmp(&self.rows[b][j]));
            let mut left = vec![0.0; self.n_labels];
            let mut right = vec![0.0; self.n_labels];
            for &i in &order {
                right[self.labels[i]] += w(i);
            }
            for pos in 0..order.len() - 1 {
                let i = order[pos];
                left[self.labels[i]] += w(i);
                right[self.labels[i]] -= w(i);
                let (v, next) = (self.rows[i][j], self.rows[order[pos + 1]][j]);
                if v == next {
                    continue;
                }
                let (wl, wr): (f64, f64) = (left.iter().sum(), right.iter().sum());
                let score = wl * gini(&left) + wr * gini(&right);
                if best.map_or(true, |(b, _)| score < b - 1e-12 * b.abs()) {
                    best = Some((score, Split { feature: j, threshold: v }));
                }
            }
        }
        best.map(|(_, s)| s)
    }

    fn partition(&self, idx: &[usize], split: Split) -> (Vec<usize>, Vec<usize>) {
        idx.iter().partition(|&&i| side(self.rows[i][split.feature], split.threshold) == 0)
    }
}

/// Greedy top-down tree minimizing weighted Gini impurity, padded to a
/// complete tree of `max_depth` by replicating leaf actions.
pub fn fit_weighted_tree(data: &WeightedDataset, max_depth: usize) -> Result<DecisionTree, ViperError> {
    if max_depth == 0 || max_depth > MAX_DEPTH {
        return Err(TreeError::Depth(max_depth).into());
    }
    let n_features = data.check()?;
    let c = compact(data);
    // Filler for nodes below an early leaf; any split works since both
    // children predict the same action.
    let filler = Split { feature: 0, threshold: c.rows[0].first().copied().unwrap_or(0.0) };
    let mut splits = vec![filler; n_decision_nodes(max_depth)];
    let mut leaves = vec![0; n_leaves(max_depth)];
    let all: Vec<usize> = (0..c.rows.len()).collect();
    grow_complete(&c, n_features, &all, 0, 0, max_depth, &mut splits, &mut leaves);
    Ok(DecisionTree::new(max_depth, splits, leaves)?)
}

#[allow(clippy::too_many_arguments)]
fn grow_complete(
    c: &Compact,
    n_features: usize,
    idx: &[usize],
    node: usize,
    level: usize,
    depth: usize,
    splits: &mut [Split],
    leaves: &mut [usize],
) {
    let first_leaf = n_decision_nodes(depth);
    if level == depth {
        leaves[node - first_leaf] = c.majority(idx);
        return;
    }
    let (mass, _) = c.impurity_mass(idx);
    let split = if c.is_pure(idx) || gini(&mass) == 0.0 { None } else { c.best_split(idx, n_features) };
    match split {
        Some(split) => {
            splits[node] = split;
            let (l, r) = c.partition(idx, split);
            grow_complete(c, n_features, &l, 2 * node + 1, level + 1, depth, splits, leaves);
            grow_complete(c, n_features, &r, 2 * node + 2, level + 1, depth, splits, leaves);
        }
        None => {
            let action = c.majority(idx);
            // Every leaf under this node gets the same action.
            let (mut lo, mut hi) = (node, node);
            for _ in level..depth {
                lo = 2 * lo + 1;
                hi = 2 * hi + 2;
            }
            leaves[lo - first_leaf..=hi - first_leaf].fill(action);
        }
    }
}

/// A tree of unrestricted shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GrownTree {
    Leaf { action: usize },
    Node { split: Split, left: Box<GrownTree>, right: Box<GrownTree> },
}

impl GrownTree {
    pub fn predict(&self, row: &[f64]) -> usize {
        let mut t = self;
        loop {
            match t {
                GrownTree::Leaf { action } => return *action,
                GrownTree::Node { split, left, right } => {
                    t = if side(row[split.feature], split.threshold) == 0 { left } else { right };
                }
            }
        }
    }

    pub fn n_decision_nodes(&self) -> usize {
        match self {
            GrownTree::Leaf { .. } => 0,
            GrownTree::Node { left, right, .. } => 1 + left.n_decision_nodes() + right.n_decision_nodes(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            GrownTree::Leaf { .. } => 0,
            GrownTree::Node { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn to_policy(&self, features: &FeatureMatrix) -> DeterministicPolicy {
        DeterministicPolicy::new((0..features.n_rows()).map(|s| self.predict(features.row(s))).collect())
    }
}

fn grow_pure(c: &Compact, n_features: usize, idx: &[usize]) -> Result<GrownTree, ViperError> {
    if c.is_pure(idx) {
        return Ok(GrownTree::Leaf { action: c.labels[idx[0]] });
    }
    // With unit weights Gini is positive here, so no split means every row
    // in `idx` has the same features.
    let split = c.best_split(idx, n_features).ok_or_else(|| {
        let first = c.labels[idx[0]];
        let second = idx.iter().map(|&i| c.labels[i]).find(|&a| a != first).unwrap_or(first);
        ViperError::Inseparable { first, second }
    })?;
    let (l, r) = c.partition(idx, split);
    Ok(GrownTree::Node {
        split,
        left: Box::new(grow_pure(c, n_features, &l)?),
        right: Box::new(grow_pure(c, n_features, &r)?),
    })
}

/// Greedy Gini tree grown until every leaf agrees with `teacher` on all states.
pub fn fit_exact_policy_tree(features: &FeatureMatrix, teacher: &DeterministicPolicy) -> Result<GrownTree, ViperError> {
    if teacher.action_of.len() != features.n_rows() {
        return Err(ViperError::Teacher(format!(
            "{} actions for {} feature rows",
            teacher.action_of.len(),
            features.n_rows()
        )));
    }
    let mut data = WeightedDataset::default();
    for (s, &a) in teacher.action_of.iter().enumerate() {
        data.push(features.row(s).to_vec(), a, 1.0);
    }
    let n_features = data.check()?;
    let c = compact(&data);
    let all: Vec<usize> = (0..c.rows.len()).collect();
    grow_pure(&c, n_features, &all)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViperConfig {
    pub depth: usize,
    pub iterations: usize,
    pub episodes_per_iteration: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for ViperConfig {
    fn default() -> Self {
        Self { depth: 3, iterations: 40, episodes_per_iteration: 30, max_steps: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViperIteration {
    pub iteration: usize,
    /// Whether this iteration's episodes followed the teacher.
    pub sampled_teacher: bool,
    pub dataset_size: usize,
    pub expected_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViperResult {
    pub tree: DecisionTree,
    pub expected_return: f64,
    pub best_iteration: usize,
    pub history: Vec<ViperIteration>,
}

/// Seed for the episodes of one iteration.
fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(iteration as u64)
}

/// Dataset aggregation: the first iteration rolls out the teacher, later ones
/// the previous student; every visited state is labelled with the teacher's
/// action and weighted by [`viper_weight`]. Returns the candidate with the
/// highest exact return.
pub fn viper_train(
    mdp: &TabularMdp,
    features: &FeatureMatrix,
    teacher: &DeterministicPolicy,
    q: &QTable,
    config: &ViperConfig,
) -> Result<ViperResult, ViperError> {
    if teacher.action_of.len() != mdp.n_states || q.values.len() != mdp.n_states * mdp.n_actions || features.n_rows() != mdp.n_states {
        return Err(ViperError::Teacher("teacher, Q table and features must cover every state".into()));
    }
    if config.iterations == 0 {
        return Err(ViperError::EmptyDataset);
    }
    let weights: Vec<f64> = (0..mdp.n_states).map(|s| viper_weight(q.row(s))).collect();
    let mut data = WeightedDataset::default();
    let mut history = Vec::with_capacity(config.iterations);
    let mut best: Option<(f64, usize, DecisionTree)> = None;
    let mut student: Option<DeterministicPolicy> = None;
    for iteration in 0..config.iterations {
        let behaviour = student.as_ref().unwrap_or(teacher);
        let sim = simulate(mdp, behaviour, iteration_seed(config.seed, iteration), config.episodes_per_iteration, config.max_steps)?;
        for trace in &sim.traces {
            for &s in &trace.states {
                data.push(features.row(s).to_vec(), teacher.action_of[s], weights[s]);
            }
        }
        let tree = fit_weighted_tree(&data, config.depth)?;
        let policy = crate::tree::tree_to_policy(&tree, features);
        let ret = evaluate_policy_exact(mdp, &policy)?.expected_return;
        history.push(ViperIteration {
            iteration,
            sampled_teacher: student.is_none(),
            dataset_size: data.len(),
            expected_return: ret,
        });
        if best.as_ref().map_or(true, |(b, _, _)| ret > *b) {
            best = Some((ret, iteration, tree));
        }
        student = Some(policy);
    }
    let (expected_return, best_iteration, tree) = best.expect("at least one iteration");
    Ok(ViperResult { tree, expected_return, best_iteration, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, EnvName, EnvSpec};
    use crate::mdp::{q_from_values, value_iteration, DEFAULT_VI_MAX_ITER, DEFAULT_VI_TOL};

    #[test]
    fn weights() {
        assert_eq!(viper_weight(&[1.0, 1.0, 1.0]), 0.0);
        assert_eq!(viper_weight(&[0.0, 5.0]), 5.0);
        assert_eq!(viper_weight(&[]), 0.0);
    }

    #[test]
    fn constant_labels_give_constant_tree() {
        let mut d = WeightedDataset::default();
        for i in 0..10 {
            d.push(vec![i as f64, (i % 3) as f64], 2, 1.0 + i as f64);
        }
        let t = fit_weighted_tree(&d, 2).unwrap();
        assert!(t.leaves().iter().all(|&a| a == 2));
    }

    #[test]
    fn xor_defeats_one_split() {
        let mut d = WeightedDataset::default();
        for (x, y) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            d.push(vec![x, y], usize::from(x != y), 1.0);
        }
        let accuracy = |t: &DecisionTree| d.rows.iter().zip(&d.labels).filter(|(r, &l)| t.predict(r) == l).count();
        assert_eq!(accuracy(&fit_weighted_tree(&d, 1).unwrap()), 2);
        assert_eq!(accuracy(&fit_weighted_tree(&d, 2).unwrap()), 4);
    }

    #[test]
    fn invalid_data_is_rejected() {
        let mut d = WeightedDataset::default();
        assert!(matches!(fit_weighted_tree(&d, 1), Err(ViperError::EmptyDataset)));
        d.push(vec![0.0], 0, -1.0);
        assert!(matches!(fit_weighted_tree(&d, 1), Err(ViperError::InvalidWeight { row: 0, .. })));
    }

    #[test]
    fn exact_tree_reproduces_teacher() {
        let (mdp, f) = build_env(&EnvSpec::new(EnvName::FrozenLake4x4)).unwrap();
        let (_, teacher) = value_iteration(&mdp, DEFAULT_VI_TOL, DEFAULT_VI_MAX_ITER).unwrap();
        let tree = fit_exact_policy_tree(&f, &teacher).unwrap();
        assert_eq!(tree.to_policy(&f), teacher);
        let constant = DeterministicPolicy::constant(mdp.n_states, 1);
        assert_eq!(fit_exact_policy_tree(&f, &constant).unwrap().n_decision_nodes(), 0);
    }

    #[test]
    fn conflicting_duplicates_are_inseparable() {
        let f = FeatureMatrix::new(vec!["x".into()], vec![vec![0.0], vec![0.0], vec![1.0]]).unwrap();
        let teacher = DeterministicPolicy::new(vec![0, 1, 1]);
        assert!(matches!(fit_exact_policy_tree(&f, &teacher), Err(ViperError::Inseparable { first: 0, second: 1 })));
    }

    #[test]
    fn viper_is_deterministic_and_monotone() {
        let (mdp, f) = build_env(&EnvSpec::new(EnvName::FrozenLake4x4)).unwrap();
        let (v, teacher) = value_iteration(&mdp, DEFAULT_VI_TOL, DEFAULT_VI_MAX_ITER).unwrap();
        let q = q_from_values(&mdp, &v);
        let cfg = ViperConfig { depth: 2, iterations: 5, seed: 3, ..Default::default() };
        let a = viper_train(&mdp, &f, &teacher, &q, &cfg).unwrap();
        let b = viper_train(&mdp, &f, &teacher, &q, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.history.windows(2).all(|w| w[0].dataset_size <= w[1].dataset_size));
        assert!(a.history.iter().all(|h| h.expected_return <= a.expected_return));
        assert!(a.history[0].sampled_teacher && !a.history[1].sampled_teacher);
    }
}
