//! A two-way traffic light.
//!
//! Each step the controller keeps or flips the light. Flipping costs 2 and
//! resets the time since the last flip. Cars then arrive on each road, one car
//! passes on the green side, and every car waiting at the red light costs
//! `0.1 * 2^wait_time`.

use super::{FeatureMatrix, RawEnv, GAMMA};
use crate::mdp::MdpBuilder;

const MAX_CARS: usize = 5;
const MAX_WAIT: usize = 5;
const ARRIVAL_A: f64 = 0.1;
const ARRIVAL_B: f64 = 0.5;
const PASS_REWARD: f64 = 1.0;
const SWITCH_COST: f64 = 2.0;
const WAIT_PENALTY: f64 = 0.1;

const KEEP: usize = 0;
const SWITCH: usize = 1;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct State {
    cars: [usize; 2],
    wait: usize,
    /// Index of the road with the green light.
    green: usize,
}

impl State {
    fn index(self) -> usize {
        ((self.cars[0] * (MAX_CARS + 1) + self.cars[1]) * (MAX_WAIT + 1) + self.wait) * 2 + self.green
    }

    fn all() -> Vec<State> {
        let mut out = Vec::new();
        for a in 0..=MAX_CARS {
            for b in 0..=MAX_CARS {
                for wait in 0..=MAX_WAIT {
                    for green in 0..2 {
                        out.push(State { cars: [a, b], wait, green });
                    }
                }
            }
        }
        out
    }
}

fn step(s: State, action: usize) -> Vec<(State, f64, f64)> {
    let (green, wait, base) = if action == SWITCH {
        (1 - s.green, 0, -SWITCH_COST)
    } else {
        (s.green, (s.wait + 1).min(MAX_WAIT), 0.0)
    };
    let mut out = Vec::with_capacity(4);
    for (arrive_a, pa) in [(1, ARRIVAL_A), (0, 1.0 - ARRIVAL_A)] {
        for (arrive_b, pb) in [(1, ARRIVAL_B), (0, 1.0 - ARRIVAL_B)] {
            let mut cars = [(s.cars[0] + arrive_a).min(MAX_CARS), (s.cars[1] + arrive_b).min(MAX_CARS)];
            let mut reward = base;
            if cars[green] > 0 {
                cars[green] -= 1;
                reward += PASS_REWARD;
            }
            reward -= WAIT_PENALTY * 2f64.powi(wait as i32) * cars[1 - green] as f64;
            out.push((State { cars, wait, green }, pa * pb, reward));
        }
    }
    out
}

pub(crate) fn generate() -> RawEnv {
    let states = State::all();
    let mut b = MdpBuilder::new("traffic_intersection", states.len(), 2, GAMMA);
    for &s in &states {
        for a in [KEEP, SWITCH] {
            for (next, p, r) in step(s, a) {
                b.add(s.index(), a, next.index(), p, r);
            }
        }
    }
    b.initial(State { cars: [0, 0], wait: 0, green: 0 }.index(), 1.0)
        .state_labels(states.iter().map(|s| format!("{s:?}")).collect())
        .action_labels(vec!["keep".into(), "switch".into()]);
    let rows =
        states.iter().map(|s| vec![s.cars[0] as f64, s.cars[1] as f64, s.wait as f64, s.green as f64]).collect();
    let names = ["cars_a", "cars_b", "wait_time", "light"].map(String::from).to_vec();
    RawEnv { mdp: b.build(), features: FeatureMatrix::new(names, rows).expect("well-formed rows") }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, test_util::max_row_error, EnvName, EnvSpec};

    #[test]
    fn indices_are_dense() {
        let states = State::all();
        assert_eq!(states.len(), 432);
        assert!(states.iter().enumerate().all(|(i, s)| s.index() == i));
    }

    #[test]
    fn reachable_states() {
        let (mdp, features) = build_env(&EnvSpec::new(EnvName::TrafficIntersection)).unwrap();
        assert_eq!((mdp.n_states, mdp.n_actions), (360, 2));
        assert_eq!(features.n_features(), 4);
        assert!(max_row_error(&mdp) < 1e-9);
    }

    #[test]
    fn waiting_cars_cost_more_over_time() {
        let s = State { cars: [0, 2], wait: 2, green: 0 };
        let out = step(s, KEEP);
        // No arrivals: both B cars wait with wait_time 3.
        let (_, p, r) = out[3];
        assert!((p - 0.45).abs() < 1e-15);
        assert!((r + 0.1 * 8.0 * 2.0).abs() < 1e-12);
        let (next, _, r) = step(s, SWITCH)[3];
        assert_eq!(next, State { cars: [0, 1], wait: 0, green: 1 });
        assert!((r - (-2.0 + 1.0)).abs() < 1e-12);
    }
}
