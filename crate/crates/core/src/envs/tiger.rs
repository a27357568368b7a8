//! A tiger hunting an antelope on a 5x5 grid.
//!
//! The tiger moves one cell or waits. Landing on the antelope catches it.
//! Otherwise the antelope jumps uniformly to one of the neighbouring cells
//! (including diagonals) that increase its Chebyshev distance to the tiger,
//! or stays put when there is none.

use super::{FeatureMatrix, RawEnv, GAMMA};
use crate::mdp::MdpBuilder;

const SIDE: i32 = 5;
const CATCH_REWARD: f64 = 1.0;
/// Per-step penalty that makes faster captures strictly better.
pub(crate) const STEP_COST: f64 = 0.01;

const ACTIONS: [(&str, (i32, i32)); 5] =
    [("right", (1, 0)), ("left", (-1, 0)), ("down", (0, 1)), ("up", (0, -1)), ("wait", (0, 0))];

type Cell = (i32, i32);

fn cell_index((x, y): Cell) -> usize {
    (x * SIDE + y) as usize
}

fn state_index(tiger: Cell, antelope: Cell) -> usize {
    cell_index(tiger) * (SIDE * SIDE) as usize + cell_index(antelope)
}

fn chebyshev(a: Cell, b: Cell) -> i32 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

fn in_grid((x, y): Cell) -> bool {
    (0..SIDE).contains(&x) && (0..SIDE).contains(&y)
}

/// Cells the antelope may jump to when the tiger stands on `tiger`.
fn escape_cells(tiger: Cell, antelope: Cell) -> Vec<Cell> {
    let d = chebyshev(tiger, antelope);
    let mut out = Vec::new();
    for dx in -1..=1 {
        for dy in -1..=1 {
            let c = (antelope.0 + dx, antelope.1 + dy);
            if (dx, dy) != (0, 0) && in_grid(c) && chebyshev(tiger, c) > d {
                out.push(c);
            }
        }
    }
    if out.is_empty() {
        out.push(antelope);
    }
    out
}

pub(crate) fn generate(step_cost: f64) -> RawEnv {
    let cells: Vec<Cell> = (0..SIDE).flat_map(|x| (0..SIDE).map(move |y| (x, y))).collect();
    let n_pairs = cells.len() * cells.len();
    let caught = n_pairs;
    let mut b = MdpBuilder::new("tiger_vs_antelope", n_pairs + 1, ACTIONS.len(), GAMMA);
    let mut rows = vec![Vec::new(); n_pairs + 1];
    let mut labels = vec![String::new(); n_pairs + 1];
    for &tiger in &cells {
        for &antelope in &cells {
            let s = state_index(tiger, antelope);
            rows[s] = vec![tiger.0 as f64, tiger.1 as f64, antelope.0 as f64, antelope.1 as f64];
            labels[s] = format!("T{tiger:?}A{antelope:?}");
            b.initial(s, 1.0 / n_pairs as f64);
            for (a, (_, (dx, dy))) in ACTIONS.iter().enumerate() {
                let moved = (tiger.0 + dx, tiger.1 + dy);
                let t = if in_grid(moved) { moved } else { tiger };
                if t == antelope {
                    b.add(s, a, caught, 1.0, CATCH_REWARD);
                    continue;
                }
                let escapes = escape_cells(t, antelope);
                let p = 1.0 / escapes.len() as f64;
                for e in escapes {
                    b.add(s, a, state_index(t, e), p, -step_cost);
                }
            }
        }
    }
    b.absorbing(caught);
    rows[caught] = vec![-1.0; 4];
    labels[caught] = "caught".into();
    b.state_labels(labels).action_labels(ACTIONS.iter().map(|(l, _)| l.to_string()).collect());
    let names = ["tiger_x", "tiger_y", "antelope_x", "antelope_y"].map(String::from).to_vec();
    RawEnv { mdp: b.build(), features: FeatureMatrix::new(names, rows).expect("well-formed rows") }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, test_util::max_row_error, EnvName, EnvSpec};

    #[test]
    fn state_count() {
        let (mdp, features) = build_env(&EnvSpec::new(EnvName::TigerVsAntelope)).unwrap();
        assert_eq!((mdp.n_states, mdp.n_actions), (626, 5));
        assert_eq!(features.n_features(), 4);
        assert!(max_row_error(&mdp) < 1e-9);
    }

    #[test]
    fn antelope_moves_away() {
        // Tiger at the centre, antelope adjacent: only cells at distance two qualify.
        let escapes = escape_cells((2, 2), (3, 2));
        assert_eq!(escapes, vec![(4, 1), (4, 2), (4, 3)]);
        // Cornered antelope stays.
        assert_eq!(escape_cells((3, 3), (4, 4)), vec![(4, 4)]);
    }

    #[test]
    fn stepping_onto_the_antelope_catches_it() {
        let raw = generate(STEP_COST);
        let s = state_index((1, 1), (2, 1));
        assert_eq!(raw.mdp.row(s, 0).len(), 1);
        assert_eq!(raw.mdp.row(s, 0)[0].next, 625);
        assert_eq!(raw.mdp.expected_reward(s, 0), CATCH_REWARD);
        assert!((raw.mdp.expected_reward(s, 4) + STEP_COST).abs() < 1e-15);
    }
}
