//! Robot navigation through a 5x5x5 voxel world where every voxel may make the
//! robot disappear.
//!
//! The goal voxel doubles as the single absorbing terminal: reaching it pays
//! +1, disappearing moves there with reward 0. This keeps the state count at
//! one state per voxel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FeatureMatrix, RawEnv, GAMMA};
use crate::mdp::MdpBuilder;

pub(crate) const SIDE: usize = 5;

const MOVES: [(&str, [isize; 3]); 6] = [
    ("+x", [1, 0, 0]),
    ("-x", [-1, 0, 0]),
    ("+y", [0, 1, 0]),
    ("-y", [0, -1, 0]),
    ("+z", [0, 0, 1]),
    ("-z", [0, 0, -1]),
];

fn index(v: [usize; 3]) -> usize {
    (v[0] * SIDE + v[1]) * SIDE + v[2]
}

/// Disappearance probability per voxel, drawn uniformly from [0, 1).
pub(crate) fn disappear_probabilities(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let goal = index([SIDE - 1; 3]);
    (0..SIDE.pow(3)).map(|v| if v == goal { 0.0 } else { rng.gen::<f64>() }).collect()
}

pub(crate) fn generate(seed: u64) -> RawEnv {
    let n = SIDE.pow(3);
    let goal = index([SIDE - 1; 3]);
    let danger = disappear_probabilities(seed);
    let mut b = MdpBuilder::new("3d_navigation", n, MOVES.len(), GAMMA);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for x in 0..SIDE {
        for y in 0..SIDE {
            for z in 0..SIDE {
                let s = index([x, y, z]);
                features.push(vec![x as f64, y as f64, z as f64]);
                labels.push(format!("({x},{y},{z})"));
                if s == goal {
                    b.absorbing(s);
                    continue;
                }
                for (a, (_, d)) in MOVES.iter().enumerate() {
                    let target = [x, y, z]
                        .iter()
                        .zip(d)
                        .map(|(&c, &dc)| (c as isize + dc).clamp(0, SIDE as isize - 1) as usize)
                        .collect::<Vec<_>>();
                    let t = index([target[0], target[1], target[2]]);
                    if t == goal {
                        b.add(s, a, goal, 1.0, 1.0);
                    } else {
                        b.add(s, a, goal, danger[t], 0.0);
                        b.add(s, a, t, 1.0 - danger[t], 0.0);
                    }
                }
            }
        }
    }
    b.initial(index([0, 0, 0]), 1.0)
        .state_labels(labels)
        .action_labels(MOVES.iter().map(|(l, _)| l.to_string()).collect());
    RawEnv {
        mdp: b.build(),
        features: FeatureMatrix::new(vec!["x".into(), "y".into(), "z".into()], features).expect("well-formed rows"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, test_util::max_row_error, EnvName, EnvSpec};

    #[test]
    fn one_state_per_voxel() {
        let (mdp, features) = build_env(&EnvSpec::new(EnvName::Navigation3d)).unwrap();
        assert_eq!((mdp.n_states, mdp.n_actions), (125, 6));
        assert_eq!(features.n_features(), 3);
        assert!(max_row_error(&mdp) < 1e-9);
        assert!(mdp.is_absorbing(124));
    }

    #[test]
    fn probabilities_are_seeded() {
        assert_eq!(disappear_probabilities(3), disappear_probabilities(3));
        assert_ne!(disappear_probabilities(3), disappear_probabilities(4));
        assert!(disappear_probabilities(0).iter().all(|p| (0.0..1.0).contains(p)));
    }
}
