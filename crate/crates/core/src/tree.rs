//! Complete binary decision trees over axis-aligned threshold splits.
//!
//! Nodes are stored in heap order: node `m` has children `2m + 1` (left) and
//! `2m + 2` (right). A state goes right at node `m` iff its feature value is
//! strictly greater than the node's threshold. Leaf `t` sits at heap index
//! `t + 2^D - 1`.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::FeatureMatrix;
use crate::mdp::{evaluate_policy_exact, DeterministicPolicy, MdpError, TabularMdp};

/// Largest supported depth; deeper trees have more leaves than any benchmark
/// has states.
pub const MAX_DEPTH: usize = 16;
/// Default cap on the number of candidates the brute-force oracle may visit.
pub const DEFAULT_ENUMERATION_BUDGET: f64 = 1e7;
/// Candidates only replace the incumbent when better by this relative margin,
/// so that round-off cannot override lexicographic tie-breaking.
const TIE_TOL: f64 = 1e-12;
/// Above this many states the oracle falls back to the general evaluator.
const ORACLE_DENSE_LIMIT: usize = 800;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("depth must be between 1 and {MAX_DEPTH}, got {0}")]
    Depth(usize),
    #[error("malformed tree: {0}")]
    Shape(String),
    #[error("node {node} uses feature {feature}, but only {n_features} features exist")]
    FeatureOutOfRange { node: usize, feature: usize, n_features: usize },
    #[error("node {node} uses feature `{found}` where the data has `{expected}`")]
    FeatureName { node: usize, found: String, expected: String },
    #[error("node {node} threshold {threshold} is not a candidate value of feature {feature}")]
    UnknownThreshold { node: usize, feature: usize, threshold: f64 },
    #[error("leaf {leaf} predicts action {action}, but only {n_actions} actions exist")]
    ActionOutOfRange { leaf: usize, action: usize, n_actions: usize },
    #[error("search space of {space:.3e} candidates exceeds the budget of {budget:.3e}")]
    BudgetExceeded { space: f64, budget: f64 },
    #[error("feature matrix has no rows")]
    EmptyFeatures,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// Sorted candidate thresholds per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    per_feature: Vec<Vec<f64>>,
}

impl ThresholdSet {
    pub fn new(per_feature: Vec<Vec<f64>>) -> Self {
        Self { per_feature }
    }

    pub fn n_features(&self) -> usize {
        self.per_feature.len()
    }

    pub fn feature(&self, j: usize) -> &[f64] {
        &self.per_feature[j]
    }

    /// `K_j` per feature.
    pub fn counts(&self) -> Vec<usize> {
        self.per_feature.iter().map(Vec::len).collect()
    }

    /// `sum_j K_j`, the number of split choices per decision node.
    pub fn total(&self) -> usize {
        self.per_feature.iter().map(Vec::len).sum()
    }

    /// All `(feature, threshold)` pairs ordered by feature, then threshold.
    pub fn splits(&self) -> Vec<Split> {
        self.per_feature
            .iter()
            .enumerate()
            .flat_map(|(feature, ks)| ks.iter().map(move |&threshold| Split { feature, threshold }))
            .collect()
    }

    pub fn contains(&self, split: Split) -> bool {
        self.per_feature.get(split.feature).is_some_and(|ks| ks.binary_search_by(|k| k.total_cmp(&split.threshold)).is_ok())
    }
}

/// Every distinct value of each feature column, ascending.
pub fn candidate_thresholds(features: &FeatureMatrix) -> Result<ThresholdSet, TreeError> {
    if features.n_rows() == 0 {
        return Err(TreeError::EmptyFeatures);
    }
    let per_feature = (0..features.n_features())
        .map(|j| {
            let mut vals: Vec<f64> = features.column(j).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            vals
        })
        .collect();
    Ok(ThresholdSet { per_feature })
}

/// 1 (right) iff `value > threshold`.
#[inline]
pub fn side(value: f64, threshold: f64) -> u8 {
    u8::from(value > threshold)
}

/// [`side`] for state `s` of a feature matrix.
#[inline]
pub fn state_side(features: &FeatureMatrix, s: usize, split: Split) -> u8 {
    side(features.get(s, split.feature), split.threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
}

/// Number of decision nodes `|T_D|` of a complete tree.
pub fn n_decision_nodes(depth: usize) -> usize {
    (1 << depth) - 1
}

/// Number of leaves `|T_L|` of a complete tree.
pub fn n_leaves(depth: usize) -> usize {
    1 << depth
}

/// Ancestors of leaf `t` whose left (`A_l`) or right (`A_r`) branch leads to it.
pub fn leaf_ancestors(depth: usize, leaf: usize) -> (Vec<usize>, Vec<usize>) {
    let (mut left, mut right) = (Vec::new(), Vec::new());
    let mut m = leaf + n_decision_nodes(depth);
    while m > 0 {
        let parent = (m - 1) / 2;
        if m == 2 * parent + 1 {
            left.push(parent);
        } else {
            right.push(parent);
        }
        m = parent;
    }
    left.reverse();
    right.reverse();
    (left, right)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    depth: usize,
    splits: Vec<Split>,
    leaves: Vec<usize>,
}

impl DecisionTree {
    pub fn new(depth: usize, splits: Vec<Split>, leaves: Vec<usize>) -> Result<Self, TreeError> {
        if depth == 0 || depth > MAX_DEPTH {
            return Err(TreeError::Depth(depth));
        }
        if splits.len() != n_decision_nodes(depth) || leaves.len() != n_leaves(depth) {
            return Err(TreeError::Shape(format!(
                "depth {depth} needs {} splits and {} leaves, got {} and {}",
                n_decision_nodes(depth),
                n_leaves(depth),
                splits.len(),
                leaves.len()
            )));
        }
        Ok(Self { depth, splits, leaves })
    }

    /// Every leaf predicts `action`; all nodes use `split`.
    pub fn constant(depth: usize, split: Split, action: usize) -> Result<Self, TreeError> {
        Self::new(depth, vec![split; n_decision_nodes(depth)], vec![action; n_leaves(depth)])
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn leaf_of(&self, row: &[f64]) -> usize {
        let mut m = 0;
        for _ in 0..self.depth {
            let s = self.splits[m];
            m = 2 * m + 1 + side(row[s.feature], s.threshold) as usize;
        }
        m - n_decision_nodes(self.depth)
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        self.leaves[self.leaf_of(row)]
    }

    /// Replaces every leaf by a node using `split` whose children both keep
    /// the leaf's action. The induced policy is unchanged.
    pub fn deepen(&self, split: Split) -> Result<Self, TreeError> {
        let mut splits = self.splits.clone();
        splits.extend(std::iter::repeat(split).take(n_leaves(self.depth)));
        let leaves = self.leaves.iter().flat_map(|&a| [a, a]).collect();
        Self::new(self.depth + 1, splits, leaves)
    }

    /// Checks feature and action indices against the data the tree is used on.
    pub fn check_bounds(&self, n_features: usize, n_actions: usize) -> Result<(), TreeError> {
        for (node, s) in self.splits.iter().enumerate() {
            if s.feature >= n_features {
                return Err(TreeError::FeatureOutOfRange { node, feature: s.feature, n_features });
            }
        }
        for (leaf, &action) in self.leaves.iter().enumerate() {
            if action >= n_actions {
                return Err(TreeError::ActionOutOfRange { leaf, action, n_actions });
            }
        }
        Ok(())
    }

    /// Checks that every node uses one of the candidate thresholds.
    pub fn check_thresholds(&self, thresholds: &ThresholdSet) -> Result<(), TreeError> {
        for (node, &s) in self.splits.iter().enumerate() {
            if !thresholds.contains(s) {
                return Err(TreeError::UnknownThreshold { node, feature: s.feature, threshold: s.threshold });
            }
        }
        Ok(())
    }
}

/// The deterministic policy obtained by routing every state to its leaf.
pub fn tree_to_policy(tree: &DecisionTree, features: &FeatureMatrix) -> DeterministicPolicy {
    DeterministicPolicy::new((0..features.n_rows()).map(|s| tree.predict(features.row(s))).collect())
}

/// log10 of the number of trees with non-degenerate splits:
/// `(sum_j (K_j - 1))^|T_D| * |A|^|T_L|`.
pub fn count_tree_policies(thresholds: &ThresholdSet, depth: usize, n_actions: usize) -> f64 {
    let splits: usize = thresholds.counts().iter().map(|k| k.saturating_sub(1)).sum();
    n_decision_nodes(depth) as f64 * (splits as f64).log10() + n_leaves(depth) as f64 * (n_actions as f64).log10()
}

/// Result of [`enumerate_trees`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub tree: DecisionTree,
    pub expected_return: f64,
    /// Size of the full candidate space.
    pub space: f64,
    /// Distinct policies actually evaluated.
    pub evaluated: u64,
}

/// Exact returns of deterministic policies without per-call allocation.
struct DenseEvaluator<'a> {
    mdp: &'a TabularMdp,
    rbar: Vec<f64>,
    matrix: Vec<f64>,
    rhs: Vec<f64>,
}

impl<'a> DenseEvaluator<'a> {
    fn new(mdp: &'a TabularMdp) -> Self {
        let n = mdp.n_states;
        let rbar = (0..n).flat_map(|s| (0..mdp.n_actions).map(move |a| (s, a))).map(|(s, a)| mdp.expected_reward(s, a)).collect();
        Self { mdp, rbar, matrix: vec![0.0; n * n], rhs: vec![0.0; n] }
    }

    /// `p0 . V` where `(I - gamma P_pi) V = r_pi`, by Gaussian elimination
    /// with partial pivoting on a row-major buffer.
    fn expected_return(&mut self, action_of: &[usize]) -> Result<f64, MdpError> {
        let mdp = self.mdp;
        let n = mdp.n_states;
        if n > ORACLE_DENSE_LIMIT {
            return Ok(evaluate_policy_exact(mdp, &DeterministicPolicy::new(action_of.to_vec()))?.expected_return);
        }
        let a = &mut self.matrix;
        a.iter_mut().for_each(|v| *v = 0.0);
        for s in 0..n {
            let act = action_of[s];
            a[s * n + s] = 1.0;
            for t in mdp.row(s, act) {
                a[s * n + t.next] -= mdp.gamma * t.prob;
            }
            self.rhs[s] = self.rbar[s * mdp.n_actions + act];
        }
        for col in 0..n {
            let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs())).unwrap_or(col);
            if a[pivot * n + col].abs() < 1e-300 {
                return Err(MdpError::Singular);
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(pivot * n + k, col * n + k);
                }
                self.rhs.swap(pivot, col);
            }
            let diag = a[col * n + col];
            let (upper, lower) = a.split_at_mut((col + 1) * n);
            let pivot_row = &upper[col * n..];
            for (r, row) in lower.chunks_exact_mut(n).enumerate() {
                let f = row[col] / diag;
                if f != 0.0 {
                    for k in col..n {
                        row[k] -= f * pivot_row[k];
                    }
                    self.rhs[col + 1 + r] -= f * self.rhs[col];
                }
            }
        }
        for row in (0..n).rev() {
            let mut acc = self.rhs[row];
            for k in row + 1..n {
                acc -= a[row * n + k] * self.rhs[k];
            }
            self.rhs[row] = acc / a[row * n + row];
        }
        Ok(mdp.p0.iter().zip(&self.rhs).map(|(p, v)| p * v).sum())
    }
}

/// Advances a mixed-radix counter (most significant digit first). Returns
/// false once every combination has been produced.
fn advance(digits: &mut [usize], radix: impl Fn(usize) -> usize) -> bool {
    for i in (0..digits.len()).rev() {
        digits[i] += 1;
        if digits[i] < radix(i) {
            return true;
        }
        digits[i] = 0;
    }
    false
}

/// Brute-force search over every complete tree of the given depth.
///
/// Candidates are visited in lexicographic order of (split indices per node,
/// leaf actions) and the first maximizer is returned. Split assignments that
/// route states identically to an earlier one, and leaf assignments that only
/// differ on leaves no state reaches, induce policies already seen and are
/// skipped.
pub fn enumerate_trees(
    mdp: &TabularMdp,
    features: &FeatureMatrix,
    depth: usize,
    thresholds: &ThresholdSet,
    budget: f64,
) -> Result<OracleResult, TreeError> {
    if depth == 0 || depth > MAX_DEPTH {
        return Err(TreeError::Depth(depth));
    }
    if features.n_rows() != mdp.n_states {
        return Err(MdpError::DimensionMismatch(format!(
            "{} feature rows for {} states",
            features.n_rows(),
            mdp.n_states
        ))
        .into());
    }
    let candidates = thresholds.splits();
    let (nodes, leaves) = (n_decision_nodes(depth), n_leaves(depth));
    let space = (candidates.len() as f64).powi(nodes as i32) * (mdp.n_actions as f64).powi(leaves as i32);
    if space > budget {
        return Err(TreeError::BudgetExceeded { space, budget });
    }
    if candidates.is_empty() {
        return Err(TreeError::EmptyFeatures);
    }

    let mut eval = DenseEvaluator::new(mdp);
    let mut seen_routes: HashSet<Vec<usize>> = HashSet::new();
    let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
    let mut evaluated = 0u64;
    let mut split_idx = vec![0usize; nodes];
    let mut action_of = vec![0usize; mdp.n_states];
    loop {
        let tree = DecisionTree::new(depth, split_idx.iter().map(|&i| candidates[i]).collect(), vec![0; leaves])?;
        let route: Vec<usize> = (0..mdp.n_states).map(|s| tree.leaf_of(features.row(s))).collect();
        if seen_routes.insert(route.clone()) {
            let mut occupied = vec![false; leaves];
            route.iter().for_each(|&t| occupied[t] = true);
            let mut leaf_actions = vec![0usize; leaves];
            loop {
                for s in 0..mdp.n_states {
                    action_of[s] = leaf_actions[route[s]];
                }
                let ret = eval.expected_return(&action_of)?;
                evaluated += 1;
                let better = match &best {
                    None => true,
                    Some((b, _, _)) => ret > b + TIE_TOL * b.abs().max(1.0),
                };
                if better {
                    best = Some((ret, split_idx.clone(), leaf_actions.clone()));
                }
                // Unreached leaves stay at action 0.
                if !advance(&mut leaf_actions, |t| if occupied[t] { mdp.n_actions } else { 1 }) {
                    break;
                }
            }
        }
        if !advance(&mut split_idx, |_| candidates.len()) {
            break;
        }
    }
    let (_, split_idx, leaf_actions) = best.expect("at least one candidate");
    let tree = DecisionTree::new(depth, split_idx.iter().map(|&i| candidates[i]).collect(), leaf_actions)?;
    let expected_return = evaluate_policy_exact(mdp, &tree_to_policy(&tree, features))?.expected_return;
    Ok(OracleResult { tree, expected_return, space, evaluated })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum NodeRecord {
    Branch {
        feature: String,
        feature_index: usize,
        threshold: f64,
        left: Box<NodeRecord>,
        right: Box<NodeRecord>,
    },
    Leaf {
        action: String,
        action_index: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct TreeRecord {
    depth: usize,
    root: NodeRecord,
}

fn name_or_index(names: Option<&[String]>, i: usize, prefix: &str) -> String {
    names.and_then(|n| n.get(i).cloned()).unwrap_or_else(|| format!("{prefix}{i}"))
}

/// JSON text with nested node records carrying names and indices.
pub fn serialize_tree(tree: &DecisionTree, feature_names: &[String], action_labels: Option<&[String]>) -> String {
    fn build(tree: &DecisionTree, m: usize, fnames: &[String], alabels: Option<&[String]>) -> NodeRecord {
        let first_leaf = n_decision_nodes(tree.depth);
        if m >= first_leaf {
            let a = tree.leaves[m - first_leaf];
            return NodeRecord::Leaf { action: name_or_index(alabels, a, "a"), action_index: a };
        }
        let s = tree.splits[m];
        NodeRecord::Branch {
            feature: name_or_index(Some(fnames), s.feature, "f"),
            feature_index: s.feature,
            threshold: s.threshold,
            left: Box::new(build(tree, 2 * m + 1, fnames, alabels)),
            right: Box::new(build(tree, 2 * m + 2, fnames, alabels)),
        }
    }
    let record = TreeRecord { depth: tree.depth, root: build(tree, 0, feature_names, action_labels) };
    serde_json::to_string_pretty(&record).expect("tree records serialize")
}

/// Parses [`serialize_tree`] output. Only the shape is checked; use
/// [`deserialize_tree_for`] to bind against data.
pub fn deserialize_tree(text: &str) -> Result<DecisionTree, TreeError> {
    Ok(parse_record(text)?.0)
}

/// Parses a tree and checks it against the feature matrix and action count.
/// Feature names in the file must match the matrix columns they index.
pub fn deserialize_tree_for(text: &str, features: &FeatureMatrix, n_actions: usize) -> Result<DecisionTree, TreeError> {
    let (tree, names) = parse_record(text)?;
    tree.check_bounds(features.n_features(), n_actions)?;
    for (node, (split, name)) in tree.splits.iter().zip(&names).enumerate() {
        let expected = &features.names()[split.feature];
        if name != expected {
            return Err(TreeError::FeatureName { node, found: name.clone(), expected: expected.clone() });
        }
    }
    Ok(tree)
}

fn parse_record(text: &str) -> Result<(DecisionTree, Vec<String>), TreeError> {
    let record: TreeRecord = serde_json::from_str(text)?;
    let depth = record.depth;
    if depth == 0 || depth > MAX_DEPTH {
        return Err(TreeError::Depth(depth));
    }
    let mut splits = vec![None; n_decision_nodes(depth)];
    let mut names = vec![String::new(); n_decision_nodes(depth)];
    let mut leaves = vec![None; n_leaves(depth)];
    let mut stack = vec![(&record.root, 0usize, 0usize)];
    while let Some((node, m, level)) = stack.pop() {
        match node {
            NodeRecord::Branch { feature, feature_index, threshold, left, right } => {
                if level >= depth {
                    return Err(TreeError::Shape(format!("branch below depth {depth}")));
                }
                splits[m] = Some(Split { feature: *feature_index, threshold: *threshold });
                names[m] = feature.clone();
                stack.push((left, 2 * m + 1, level + 1));
                stack.push((right, 2 * m + 2, level + 1));
            }
            NodeRecord::Leaf { action_index, .. } => {
                if level != depth {
                    return Err(TreeError::Shape(format!("leaf at level {level} in a depth-{depth} tree")));
                }
                leaves[m - n_decision_nodes(depth)] = Some(*action_index);
            }
        }
    }
    // Every slot is filled once the recursion checks above pass.
    let splits = splits.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| TreeError::Shape("missing node".into()))?;
    let leaves = leaves.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| TreeError::Shape("missing leaf".into()))?;
    Ok((DecisionTree::new(depth, splits, leaves)?, names))
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering; edges are labelled `<= k` and `> k`.
pub fn tree_to_dot(tree: &DecisionTree, feature_names: &[String], action_labels: Option<&[String]>) -> String {
    let mut out = String::from("digraph tree {\n  node [fontname=\"Helvetica\"];\n");
    let first_leaf = n_decision_nodes(tree.depth);
    for m in 0..first_leaf + n_leaves(tree.depth) {
        if m < first_leaf {
            let s = tree.splits[m];
            let name = dot_escape(&name_or_index(Some(feature_names), s.feature, "f"));
            let _ = writeln!(out, "  n{m} [shape=box, label=\"{name} <= {}\"];", s.threshold);
            let _ = writeln!(out, "  n{m} -> n{} [label=\"<= {}\"];", 2 * m + 1, s.threshold);
            let _ = writeln!(out, "  n{m} -> n{} [label=\"> {}\"];", 2 * m + 2, s.threshold);
        } else {
            let a = tree.leaves[m - first_leaf];
            let label = dot_escape(&name_or_index(action_labels, a, "a"));
            let _ = writeln!(out, "  n{m} [shape=ellipse, label=\"{label}\"];");
        }
    }
    out.push_str("}\n");
    out
}
