//! Reading trees out of solutions, checking them against exact evaluation,
//! and building feasible starts from trees.

use serde::Serialize;

use super::{big_m, MilpError, OmdtModel};
use crate::envs::FeatureMatrix;
use crate::mdp::{evaluate_policy_exact, occupancy_measure, TabularMdp};
use crate::tree::{state_side, tree_to_policy, DecisionTree, TreeError};

/// Absolute tolerance on each flow row and on the total occupancy.
const FLOW_TOL: f64 = 1e-6;
/// Relative tolerance between the solver objective and exact evaluation.
const OBJECTIVE_TOL: f64 = 1e-5;

fn unique_set(values: &[f64], idx: impl Iterator<Item = usize>, what: &'static str, index: usize) -> Result<usize, MilpError> {
    let set: Vec<usize> = idx.enumerate().filter(|&(_, v)| values[v] >= 0.5).map(|(i, _)| i).collect();
    match set[..] {
        [one] => Ok(one),
        _ => Err(MilpError::Ambiguous { what, index, count: set.len() }),
    }
}

/// The tree encoded by the `b` and `c` indicators of a solution.
pub fn extract_tree(omdt: &OmdtModel, values: &[f64]) -> Result<DecisionTree, MilpError> {
    let l = &omdt.layout;
    if values.len() != l.n_variables() {
        return Err(MilpError::Model(format!("{} values for {} variables", values.len(), l.n_variables())));
    }
    let splits = (0..l.n_nodes())
        .map(|m| unique_set(values, (0..l.splits.len()).map(|i| l.b(m, i)), "node", m).map(|i| l.splits[i]))
        .collect::<Result<Vec<_>, _>>()?;
    let leaves = (0..l.n_leaves())
        .map(|t| unique_set(values, (0..l.n_actions).map(|a| l.c(t, a)), "leaf", t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DecisionTree::new(l.depth, splits, leaves)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Observed error; for the policy check, the number of mismatched states.
    pub error: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verification {
    pub checks: Vec<CheckResult>,
    pub solver_objective: f64,
    pub exact_return: f64,
}

impl Verification {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Runs the four consistency checks of a solution against its tree:
/// `policy` (the pi assignment matches the tree), `flow` (occupancy
/// conservation per state), `objective` (solver objective against exact
/// evaluation) and `occupancy_total` (`sum x = 1 / (1 - gamma)`).
pub fn verify_solution(
    mdp: &TabularMdp,
    features: &FeatureMatrix,
    omdt: &OmdtModel,
    values: &[f64],
    tree: &DecisionTree,
) -> Result<Verification, MilpError> {
    let l = &omdt.layout;
    if values.len() != l.n_variables() || mdp.n_states != l.n_states || mdp.n_actions != l.n_actions {
        return Err(MilpError::Model("solution, model and MDP dimensions disagree".into()));
    }
    tree.check_bounds(features.n_features(), mdp.n_actions)?;
    let policy = tree_to_policy(tree, features);

    let mismatched = (0..l.n_states)
        .filter(|&s| (0..l.n_actions).any(|a| (values[l.pi(s, a)] >= 0.5) != (policy.action_of[s] == a)))
        .count();

    let mut residual = mdp.p0.clone();
    for s in 0..l.n_states {
        for a in 0..l.n_actions {
            let x = values[l.x(s, a)];
            residual[s] -= x;
            for t in mdp.row(s, a) {
                residual[t.next] += mdp.gamma * t.prob * x;
            }
        }
    }
    let flow_error = residual.iter().fold(0.0, |m: f64, r| m.max(r.abs()));

    let solver_objective = omdt.model.objective_value(values);
    let exact_return = evaluate_policy_exact(mdp, &policy)?.expected_return;
    let objective_error = (solver_objective - exact_return).abs() / exact_return.abs().max(1.0);

    let total: f64 = (0..l.n_states).flat_map(|s| (0..l.n_actions).map(move |a| (s, a))).map(|(s, a)| values[l.x(s, a)]).sum();
    let total_error = (total - big_m(mdp.gamma)?).abs();

    let check = |name, error: f64, tolerance| CheckResult { name, passed: error <= tolerance, error, tolerance };
    Ok(Verification {
        checks: vec![
            check("policy", mismatched as f64, 0.0),
            check("flow", flow_error, FLOW_TOL),
            check("objective", objective_error, OBJECTIVE_TOL),
            check("occupancy_total", total_error, FLOW_TOL),
        ],
        solver_objective,
        exact_return,
    })
}

/// A feasible assignment encoding `tree`, usable as a MIP start.
pub fn warm_start(omdt: &OmdtModel, tree: &DecisionTree, mdp: &TabularMdp, features: &FeatureMatrix) -> Result<Vec<f64>, MilpError> {
    let l = &omdt.layout;
    if tree.depth() != l.depth {
        return Err(TreeError::Depth(tree.depth()).into());
    }
    tree.check_bounds(features.n_features(), l.n_actions)?;
    let mut values = vec![0.0; l.n_variables()];
    for (m, &split) in tree.splits().iter().enumerate() {
        let i = l.splits.iter().position(|&s| s == split).ok_or(TreeError::UnknownThreshold {
            node: m,
            feature: split.feature,
            threshold: split.threshold,
        })?;
        values[l.b(m, i)] = 1.0;
        for s in 0..l.n_states {
            values[l.d(s, m)] = f64::from(state_side(features, s, split));
        }
    }
    for (t, &a) in tree.leaves().iter().enumerate() {
        values[l.c(t, a)] = 1.0;
    }
    let policy = tree_to_policy(tree, features);
    for (s, &a) in policy.action_of.iter().enumerate() {
        values[l.pi(s, a)] = 1.0;
    }
    let x = occupancy_measure(mdp, &policy)?;
    for s in 0..l.n_states {
        for a in 0..l.n_actions {
            values[l.x(s, a)] = x[s * l.n_actions + a];
        }
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, EnvName, EnvSpec};
    use crate::milp::build_omdt;
    use crate::tree::Split;

    fn frozenlake_tree() -> (TabularMdp, FeatureMatrix, OmdtModel, DecisionTree) {
        let (mdp, f) = build_env(&EnvSpec::new(EnvName::FrozenLake4x4)).unwrap();
        let omdt = build_omdt(&mdp, &f, 1).unwrap();
        let tree = DecisionTree::new(1, vec![Split { feature: 1, threshold: 1.0 }], vec![1, 2]).unwrap();
        (mdp, f, omdt, tree)
    }

    #[test]
    fn warm_start_is_feasible_and_verifies() {
        let (mdp, f, omdt, tree) = frozenlake_tree();
        let start = warm_start(&omdt, &tree, &mdp, &f).unwrap();
        assert!(omdt.model.max_violation(&start) < 1e-9);
        assert_eq!(extract_tree(&omdt, &start).unwrap(), tree);
        let report = verify_solution(&mdp, &f, &omdt, &start, &tree).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn tampering_fails_the_matching_check() {
        let (mdp, f, omdt, tree) = frozenlake_tree();
        let mut start = warm_start(&omdt, &tree, &mdp, &f).unwrap();
        let l = &omdt.layout;
        let a = tree_to_policy(&tree, &f).action_of[0];
        start[l.pi(0, a)] = 0.0;
        start[l.pi(0, (a + 1) % l.n_actions)] = 1.0;
        let report = verify_solution(&mdp, &f, &omdt, &start, &tree).unwrap();
        assert!(!report.check("policy").unwrap().passed);
        assert!(report.check("flow").unwrap().passed);

        let start = warm_start(&omdt, &tree, &mdp, &f).unwrap();
        let other_gamma = TabularMdp { gamma: 0.95, ..mdp };
        let report = verify_solution(&other_gamma, &f, &omdt, &start, &tree).unwrap();
        assert!(!report.check("objective").unwrap().passed);
    }

    #[test]
    fn ambiguous_indicators_are_rejected() {
        let (mdp, f, omdt, tree) = frozenlake_tree();
        let mut start = warm_start(&omdt, &tree, &mdp, &f).unwrap();
        let l = &omdt.layout;
        start[l.b(0, 0)] = 0.5;
        start[l.b(0, 1)] = 0.5;
        for i in 2..l.splits.len() {
            start[l.b(0, i)] = 0.0;
        }
        assert!(matches!(extract_tree(&omdt, &start), Err(MilpError::Ambiguous { what: "node", index: 0, count: 2 })));
        let mut start = warm_start(&omdt, &tree, &mdp, &f).unwrap();
        start[l.c(1, 2)] = 0.0;
        assert!(matches!(extract_tree(&omdt, &start), Err(MilpError::Ambiguous { what: "leaf", index: 1, count: 0 })));
    }
}
