//! Single-product inventory control with Poisson demand.
//!
//! The state is the stock level, the action the order quantity. Orders arrive
//! immediately, stock is capped at the warehouse capacity and unmet demand is
//! lost.

use super::{FeatureMatrix, RawEnv, GAMMA};
use crate::mdp::MdpBuilder;

pub(crate) const CAPACITY: usize = 100;
pub(crate) const MAX_ORDER: usize = 99;
const DEMAND_MEAN: f64 = 15.0;
const FIXED_ORDER_COST: f64 = 10.0;
const UNIT_COST: f64 = 2.0;
const HOLDING_COST: f64 = 1.0;
const PRICE: f64 = 4.0;

/// Poisson probabilities P(D = k) for k < n; the caller folds the tail.
fn poisson_pmf(mean: f64, n: usize) -> Vec<f64> {
    let mut pmf = Vec::with_capacity(n);
    let mut p = (-mean).exp();
    for k in 0..n {
        pmf.push(p);
        p *= mean / (k + 1) as f64;
    }
    pmf
}

/// Sales distribution when `stock` units are on hand.
fn sales_distribution(stock: usize, pmf: &[f64]) -> Vec<f64> {
    let mut dist = pmf[..stock].to_vec();
    let below: f64 = dist.iter().sum();
    dist.push((1.0 - below).max(0.0));
    dist
}

pub(crate) fn generate() -> RawEnv {
    let n_states = CAPACITY + 1;
    let n_actions = MAX_ORDER + 1;
    let pmf = poisson_pmf(DEMAND_MEAN, n_states);
    let mut b = MdpBuilder::new("inventory", n_states, n_actions, GAMMA);
    for x in 0..n_states {
        for a in 0..n_actions {
            let y = (x + a).min(CAPACITY);
            let cost = if a > 0 { FIXED_ORDER_COST } else { 0.0 }
                + UNIT_COST * (y - x) as f64
                + HOLDING_COST * x as f64;
            for (sales, p) in sales_distribution(y, &pmf).into_iter().enumerate() {
                if p > 0.0 {
                    b.add(x, a, y - sales, p, PRICE * sales as f64 - cost);
                }
            }
        }
    }
    b.initial(0, 1.0)
        .state_labels((0..n_states).map(|x| x.to_string()).collect())
        .action_labels((0..n_actions).map(|a| format!("order_{a}")).collect());
    RawEnv {
        mdp: b.build(),
        features: FeatureMatrix::new(vec!["inventory".into()], (0..n_states).map(|x| vec![x as f64]).collect())
            .expect("well-formed rows"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, test_util::max_row_error, EnvName, EnvSpec};

    #[test]
    fn sales_never_exceed_stock() {
        let pmf = poisson_pmf(DEMAND_MEAN, CAPACITY + 1);
        let d = sales_distribution(0, &pmf);
        assert_eq!(d, vec![1.0]);
        let d = sales_distribution(20, &pmf);
        assert_eq!(d.len(), 21);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_and_rewards() {
        let (mdp, features) = build_env(&EnvSpec::new(EnvName::Inventory)).unwrap();
        assert_eq!((mdp.n_states, mdp.n_actions), (101, 100));
        assert_eq!(features.n_features(), 1);
        assert!(max_row_error(&mdp) < 1e-9);
        // Empty shelf, no order: nothing happens.
        assert_eq!(mdp.expected_reward(0, 0), 0.0);
        // Ordering one unit from empty: pay 10 + 2, sell it with P(D >= 1).
        let p_sell = 1.0 - (-DEMAND_MEAN).exp();
        assert!((mdp.expected_reward(0, 1) - (4.0 * p_sell - 12.0)).abs() < 1e-12);
    }
}
