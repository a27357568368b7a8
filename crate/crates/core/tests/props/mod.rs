//! Solver-free invariants, shared by the `properties` and `acceptance`
//! targets. Each suite drives a proptest runner and returns the first
//! failure as a message.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use omdt_core::envs::{build_env, mdp_from_str, mdp_to_string, EnvName, EnvSpec, FeatureMatrix};
use omdt_core::mdp::{
    estimate_return, evaluate_policy_exact, occupancy_measure, prune_unreachable, q_from_values, validate,
    value_iteration, DeterministicPolicy, EvalMethod, MdpBuilder, StochasticPolicy, TabularMdp,
};
use omdt_core::milp::{model_from_mps, model_to_mps, MilpModel, Relation, VarKind};
use omdt_core::tree::{
    deserialize_tree_for, leaf_ancestors, n_decision_nodes, n_leaves, serialize_tree, side, DecisionTree, Split,
};

pub type Suite = (&'static str, fn() -> Result<(), String>);

pub const SUITES: [Suite; 11] = [
    ("environment rows are stochastic", environment_rows),
    ("random rows are stochastic", random_rows),
    ("pruning is idempotent", pruning_idempotent),
    ("bellman residual bounds the greedy loss", bellman_residual),
    ("occupancy sums to 1/(1-gamma)", occupancy_total),
    ("monte carlo agrees with exact evaluation", monte_carlo),
    ("routing partitions states", routing_partition),
    ("deepening keeps the policy", deepening),
    ("tree json round trip", tree_round_trip),
    ("mdp file round trip", mdp_file_round_trip),
    ("mps round trip", mps_round_trip),
];

#[derive(Debug, Clone)]
struct RandomMdp {
    n_states: usize,
    n_actions: usize,
    /// Per `(s, a)`: unnormalized successor weights and a reward.
    rows: Vec<(Vec<u32>, f64)>,
    p0: Vec<u32>,
    gamma: f64,
    features: Vec<Vec<f64>>,
}

impl RandomMdp {
    fn build(&self) -> (TabularMdp, FeatureMatrix) {
        let mut b = MdpBuilder::new("random", self.n_states, self.n_actions, self.gamma);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let (weights, reward) = &self.rows[s * self.n_actions + a];
                let total: u32 = weights.iter().sum();
                for (next, &w) in weights.iter().enumerate() {
                    if w > 0 {
                        b.add(s, a, next, f64::from(w) / f64::from(total), *reward);
                    }
                }
            }
        }
        let total: u32 = self.p0.iter().sum();
        for (s, &w) in self.p0.iter().enumerate() {
            if w > 0 {
                b.initial(s, f64::from(w) / f64::from(total));
            }
        }
        let names = (0..self.features[0].len()).map(|j| format!("f{j}")).collect();
        (b.build(), FeatureMatrix::new(names, self.features.clone()).unwrap())
    }
}

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    // Fixed seed so the acceptance output is reproducible.
    let mut runner = TestRunner::new_with_rng(
        Config { cases, failure_persistence: None, ..Config::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

/// Weights with at least one positive entry.
fn weights(n: usize) -> impl Strategy<Value = Vec<u32>> {
    (prop::collection::vec(0u32..4, n), 0..n).prop_map(|(mut w, forced)| {
        w[forced] += 1;
        w
    })
}

fn random_mdp(max_states: usize, gammas: std::ops::Range<f64>) -> impl Strategy<Value = RandomMdp> {
    (1..=max_states, 1usize..=3, 1usize..=3).prop_flat_map(move |(n_states, n_actions, n_features)| {
        (
            prop::collection::vec((weights(n_states), -1.0f64..1.0), n_states * n_actions),
            weights(n_states),
            gammas.clone(),
            prop::collection::vec(prop::collection::vec((0u8..4).prop_map(f64::from), n_features), n_states),
        )
            .prop_map(move |(rows, p0, gamma, features)| RandomMdp { n_states, n_actions, rows, p0, gamma, features })
    })
}

fn random_tree(depth: usize, n_features: usize, n_actions: usize) -> impl Strategy<Value = DecisionTree> {
    (
        prop::collection::vec((0..n_features, (0u8..4).prop_map(f64::from)), n_decision_nodes(depth)),
        prop::collection::vec(0..n_actions, n_leaves(depth)),
    )
        .prop_map(move |(splits, leaves)| {
            let splits = splits.into_iter().map(|(feature, threshold)| Split { feature, threshold }).collect();
            DecisionTree::new(depth, splits, leaves).unwrap()
        })
}

fn small_rows() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u8..5).prop_map(f64::from), 3)
}

fn max_row_error(mdp: &TabularMdp) -> f64 {
    mdp.transitions.iter().map(|row| (row.iter().map(|t| t.prob).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
}

fn environment_rows() -> Result<(), String> {
    for name in EnvName::ALL {
        let (mdp, features) = build_env(&EnvSpec::new(name)).map_err(|e| e.to_string())?;
        if !validate(&mdp).is_empty() {
            return Err(format!("{name}: {:?}", validate(&mdp)));
        }
        if max_row_error(&mdp) >= 1e-9 || (mdp.p0.iter().sum::<f64>() - 1.0).abs() >= 1e-9 {
            return Err(format!("{name}: row error {:.2e}", max_row_error(&mdp)));
        }
        if features.n_rows() != mdp.n_states {
            return Err(format!("{name}: {} feature rows", features.n_rows()));
        }
        let again = prune_unreachable(&mdp, &features).map_err(|e| e.to_string())?;
        if again.mdp != mdp {
            return Err(format!("{name} is not closed under pruning"));
        }
    }
    Ok(())
}

fn random_rows() -> Result<(), String> {
    run(64, random_mdp(8, 0.5..0.99), |m| {
        let (mdp, _) = m.build();
        prop_assert!(validate(&mdp).is_empty());
        prop_assert!(max_row_error(&mdp) < 1e-9);
        Ok(())
    })
}

fn pruning_idempotent() -> Result<(), String> {
    run(64, random_mdp(8, 0.5..0.99), |m| {
        let (mdp, features) = m.build();
        let once = prune_unreachable(&mdp, &features).unwrap();
        let twice = prune_unreachable(&once.mdp, &once.features).unwrap();
        prop_assert_eq!(&twice.mdp, &once.mdp);
        prop_assert_eq!(&twice.features, &once.features);
        prop_assert!(twice.index_map.iter().enumerate().all(|(i, m)| *m == Some(i)));
        prop_assert!(validate(&once.mdp).is_empty());
        // Kept states keep their relative order.
        let kept: Vec<usize> = once.index_map.iter().flatten().copied().collect();
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        Ok(())
    })
}

fn bellman_residual() -> Result<(), String> {
    run(64, random_mdp(8, 0.5..0.99), |m| {
        let (mdp, _) = m.build();
        let tol = 1e-10;
        let (v, greedy) = value_iteration(&mdp, tol, 1_000_000).unwrap();
        prop_assert!(v.residual < tol);
        // A greedy policy w.r.t. an eps-accurate backup loses at most 2 gamma eps / (1 - gamma).
        let slack = 2.0 * mdp.gamma * tol / (1.0 - mdp.gamma) + 1e-9;
        let j_opt = v.expected_return(&mdp);
        let j_greedy = evaluate_policy_exact(&mdp, &greedy).unwrap().expected_return;
        prop_assert!((j_greedy - j_opt).abs() <= slack, "greedy {} optimum {}", j_greedy, j_opt);
        for a in 0..mdp.n_actions {
            let constant = DeterministicPolicy::constant(mdp.n_states, a);
            prop_assert!(evaluate_policy_exact(&mdp, &constant).unwrap().expected_return <= j_opt + slack);
        }
        prop_assert_eq!(q_from_values(&mdp, &v).greedy(), greedy);
        Ok(())
    })
}

fn occupancy_total() -> Result<(), String> {
    run(64, (random_mdp(8, 0.5..0.99), any::<u64>()), |(m, seed)| {
        let (mdp, _) = m.build();
        let policy =
            DeterministicPolicy::new((0..mdp.n_states).map(|s| (seed as usize).wrapping_add(s) % mdp.n_actions).collect());
        let x = occupancy_measure(&mdp, &policy).unwrap();
        prop_assert!((x.iter().sum::<f64>() - 1.0 / (1.0 - mdp.gamma)).abs() < 1e-8);
        let j: f64 = (0..mdp.n_states)
            .flat_map(|s| (0..mdp.n_actions).map(move |a| (s, a)))
            .map(|(s, a)| x[s * mdp.n_actions + a] * mdp.expected_reward(s, a))
            .sum();
        let exact = evaluate_policy_exact(&mdp, &policy).unwrap().expected_return;
        prop_assert!((j - exact).abs() < 1e-8 * exact.abs().max(1.0));
        Ok(())
    })
}

fn monte_carlo() -> Result<(), String> {
    run(16, (random_mdp(6, 0.5..0.8), any::<u64>()), |(m, seed)| {
        let (mdp, _) = m.build();
        let policy = StochasticPolicy::uniform(mdp.n_states, mdp.n_actions);
        let exact = evaluate_policy_exact(&mdp, &policy).unwrap().expected_return;
        let max_steps = 200;
        let mc = estimate_return(&mdp, &policy, seed, 4000, max_steps).unwrap();
        let EvalMethod::MonteCarlo { std_error, .. } = mc.method else {
            return Err(TestCaseError::fail("not a Monte Carlo report"));
        };
        // Rewards lie in [-1, 1], so truncation costs at most gamma^T / (1 - gamma).
        let truncation = mdp.gamma.powi(max_steps as i32) / (1.0 - mdp.gamma);
        prop_assert!(
            (mc.expected_return - exact).abs() <= 5.0 * std_error + truncation + 1e-12,
            "mc {} exact {} se {}",
            mc.expected_return,
            exact,
            std_error
        );
        Ok(())
    })
}

fn routing_partition() -> Result<(), String> {
    let strategy = (1usize..=4)
        .prop_flat_map(|d| (random_tree(d, 3, 3), prop::collection::vec(small_rows(), 1..40)));
    run(128, strategy, |(tree, rows)| {
        let depth = tree.depth();
        let mut routed = 0;
        for row in &rows {
            let leaf = tree.leaf_of(row);
            prop_assert!(leaf < n_leaves(depth));
            routed += 1;
            // The row satisfies every test on the path to its leaf.
            let (left, right) = leaf_ancestors(depth, leaf);
            prop_assert_eq!(left.len() + right.len(), depth);
            for (nodes, want) in [(left, 0), (right, 1)] {
                for m in nodes {
                    let s = tree.splits()[m];
                    prop_assert_eq!(side(row[s.feature], s.threshold), want);
                }
            }
            // And fails at least one test on the path to every other leaf.
            for other in (0..n_leaves(depth)).filter(|&t| t != leaf) {
                let (left, right) = leaf_ancestors(depth, other);
                let reaches = left.iter().all(|&m| side(row[tree.splits()[m].feature], tree.splits()[m].threshold) == 0)
                    && right.iter().all(|&m| side(row[tree.splits()[m].feature], tree.splits()[m].threshold) == 1);
                prop_assert!(!reaches);
            }
            prop_assert_eq!(tree.predict(row), tree.leaves()[leaf]);
        }
        prop_assert_eq!(routed, rows.len());
        Ok(())
    })
}

fn deepening() -> Result<(), String> {
    let strategy = ((1usize..=4).prop_flat_map(|d| random_tree(d, 3, 3)), small_rows());
    run(128, strategy, |(tree, row)| {
        let deeper = tree.deepen(Split { feature: 1, threshold: 2.0 }).unwrap();
        prop_assert_eq!(deeper.depth(), tree.depth() + 1);
        prop_assert_eq!(deeper.predict(&row), tree.predict(&row));
        Ok(())
    })
}

fn tree_round_trip() -> Result<(), String> {
    run(128, (1usize..=5).prop_flat_map(|d| random_tree(d, 3, 4)), |tree| {
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let features = FeatureMatrix::new(names.clone(), vec![vec![0.0, 1.0, 2.0]]).unwrap();
        let text = serialize_tree(&tree, &names, None);
        let back = deserialize_tree_for(&text, &features, 4).unwrap();
        prop_assert_eq!(&back, &tree);
        prop_assert_eq!(serialize_tree(&back, &names, None), text);
        Ok(())
    })
}

fn mdp_file_round_trip() -> Result<(), String> {
    run(48, random_mdp(8, 0.5..0.99), |m| {
        let (mdp, features) = m.build();
        let text = mdp_to_string(&mdp, &features);
        let (back, back_features) = mdp_from_str(&text).unwrap();
        prop_assert_eq!(&back, &mdp);
        prop_assert_eq!(&back_features, &features);
        Ok(())
    })
}

fn mps_round_trip() -> Result<(), String> {
    let vars = prop::collection::vec((0u8..3, -5.0f64..5.0, 0.0f64..10.0, -3.0f64..3.0), 1..12);
    let rows = prop::collection::vec(
        (prop::collection::vec((0usize..12, -4.0f64..4.0), 0..6), 0u8..3, -10.0f64..10.0),
        0..10,
    );
    run(48, (vars, rows, any::<bool>()), |(vars, rows, maximize)| {
        let mut model = MilpModel::new("random", maximize);
        for (i, &(kind, lo, width, obj)) in vars.iter().enumerate() {
            match kind {
                0 => model.add_var(format!("x{i}"), VarKind::Binary, 0.0, 1.0, obj),
                1 => model.add_var(format!("x{i}"), VarKind::Integer, lo.floor(), lo.floor() + width.ceil(), obj),
                _ => model.add_var(format!("x{i}"), VarKind::Continuous, lo, lo + width, obj),
            };
        }
        for (r, (terms, rel, rhs)) in rows.into_iter().enumerate() {
            let terms: Vec<(usize, f64)> = terms.into_iter().map(|(v, c)| (v % vars.len(), c)).collect();
            let relation = [Relation::Le, Relation::Eq, Relation::Ge][rel as usize];
            model.add_constraint(format!("r{r}"), terms, relation, rhs);
        }
        let text = model_to_mps(&model);
        let back = model_from_mps(&text).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(model_to_mps(&back), text);
        Ok(())
    })
}
