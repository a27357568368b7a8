//! Points in the unit square labelled by an XOR of their rounded coordinates.
//!
//! Every action moves to a uniformly random point, so the task reduces to
//! classifying each point correctly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FeatureMatrix, RawEnv, GAMMA};
use crate::mdp::MdpBuilder;

pub(crate) const N_POINTS: usize = 200;

/// +1 when `action` equals `(round(x) + round(y)) mod 2`, otherwise -1.
pub fn xor_reward(x: f64, y: f64, action: usize) -> f64 {
    let label = (x.round() as i64 + y.round() as i64).rem_euclid(2) as usize;
    if label == action {
        1.0
    } else {
        -1.0
    }
}

pub(crate) fn points(seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..N_POINTS).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect()
}

pub(crate) fn generate(seed: u64) -> RawEnv {
    let pts = points(seed);
    let p = 1.0 / N_POINTS as f64;
    let mut b = MdpBuilder::new("xor", N_POINTS, 2, GAMMA);
    for (s, &[x, y]) in pts.iter().enumerate() {
        b.initial(s, p);
        for a in 0..2 {
            let r = xor_reward(x, y, a);
            for next in 0..N_POINTS {
                b.add(s, a, next, p, r);
            }
        }
    }
    b.state_labels((0..N_POINTS).map(|s| format!("p{s}")).collect()).action_labels(vec!["0".into(), "1".into()]);
    RawEnv {
        mdp: b.build(),
        features: FeatureMatrix::new(vec!["x".into(), "y".into()], pts.iter().map(|p| p.to_vec()).collect())
            .expect("well-formed rows"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, test_util::max_row_error, EnvName, EnvSpec};

    #[test]
    fn reward_table() {
        assert_eq!(xor_reward(0.2, 0.7, 1), 1.0);
        assert_eq!(xor_reward(0.2, 0.7, 0), -1.0);
        assert_eq!(xor_reward(0.6, 0.7, 0), 1.0);
        assert_eq!(xor_reward(0.1, 0.1, 0), 1.0);
    }

    #[test]
    fn shape() {
        let (mdp, features) = build_env(&EnvSpec::new(EnvName::Xor).with_seed(7)).unwrap();
        assert_eq!((mdp.n_states, mdp.n_actions), (200, 2));
        assert_eq!(features.n_rows(), 200);
        assert!(max_row_error(&mdp) < 1e-9);
        assert_ne!(points(7), points(8));
    }
}
