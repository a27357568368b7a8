//! Tic-tac-toe as X against an opponent that plays uniformly at random.
//!
//! States are the boards where X is to move, plus one absorbing state for
//! finished games. Each square is one-hot encoded as empty / X / O; the
//! finished-game state uses -1 in every column. Playing an occupied square
//! leaves the board unchanged.

use std::collections::HashMap;

use super::{FeatureMatrix, RawEnv, GAMMA};
use crate::mdp::MdpBuilder;

const EMPTY: u8 = 0;
const X: u8 = 1;
const O: u8 = 2;
const WIN: f64 = 1.0;
const LOSS: f64 = -1.0;

type Board = [u8; 9];

const LINES: [[usize; 3]; 8] = [
    [0, 1, 2],
    [3, 4, 5],
    [6, 7, 8],
    [0, 3, 6],
    [1, 4, 7],
    [2, 5, 8],
    [0, 4, 8],
    [2, 4, 6],
];

fn wins(board: &Board, mark: u8) -> bool {
    LINES.iter().any(|l| l.iter().all(|&i| board[i] == mark))
}

fn empties(board: &Board) -> impl Iterator<Item = usize> + '_ {
    (0..9).filter(|&i| board[i] == EMPTY)
}

enum Outcome {
    Board(Board),
    Over(f64),
}

/// Result of X playing `square`, as a distribution over the opponent reply.
fn play(board: &Board, square: usize, draw_reward: f64) -> Vec<(Outcome, f64)> {
    if board[square] != EMPTY {
        return vec![(Outcome::Board(*board), 1.0)];
    }
    let mut after = *board;
    after[square] = X;
    if wins(&after, X) {
        return vec![(Outcome::Over(WIN), 1.0)];
    }
    let replies: Vec<usize> = empties(&after).collect();
    if replies.is_empty() {
        return vec![(Outcome::Over(draw_reward), 1.0)];
    }
    let p = 1.0 / replies.len() as f64;
    replies
        .into_iter()
        .map(|r| {
            let mut next = after;
            next[r] = O;
            if wins(&next, O) {
                (Outcome::Over(LOSS), p)
            } else if empties(&next).next().is_none() {
                (Outcome::Over(draw_reward), p)
            } else {
                (Outcome::Board(next), p)
            }
        })
        .collect()
}

/// Boards reachable with X to move, in discovery order from the empty board.
fn reachable_boards(draw_reward: f64) -> Vec<Board> {
    let mut boards = vec![[EMPTY; 9]];
    let mut seen: HashMap<Board, usize> = HashMap::from([([EMPTY; 9], 0)]);
    let mut i = 0;
    while i < boards.len() {
        let board = boards[i];
        for sq in empties(&board) {
            for (outcome, _) in play(&board, sq, draw_reward) {
                if let Outcome::Board(next) = outcome {
                    if !seen.contains_key(&next) {
                        seen.insert(next, boards.len());
                        boards.push(next);
                    }
                }
            }
        }
        i += 1;
    }
    boards
}

fn feature_names() -> Vec<String> {
    (0..9).flat_map(|i| ["empty", "x", "o"].map(|m| format!("sq{i}_{m}"))).collect()
}

pub(crate) fn generate(draw_reward: f64) -> RawEnv {
    let boards = reachable_boards(draw_reward);
    let index: HashMap<Board, usize> = boards.iter().enumerate().map(|(i, b)| (*b, i)).collect();
    let done = boards.len();
    let mut b = MdpBuilder::new("tictactoe_vs_random", boards.len() + 1, 9, GAMMA);
    for (s, board) in boards.iter().enumerate() {
        for sq in 0..9 {
            for (outcome, p) in play(board, sq, draw_reward) {
                match outcome {
                    Outcome::Board(next) => b.add(s, sq, index[&next], p, 0.0),
                    Outcome::Over(r) => b.add(s, sq, done, p, r),
                };
            }
        }
    }
    b.absorbing(done);
    let mut labels: Vec<String> =
        boards.iter().map(|bd| bd.iter().map(|&c| ['.', 'X', 'O'][c as usize]).collect()).collect();
    labels.push("done".into());
    b.initial(0, 1.0).state_labels(labels).action_labels((0..9).map(|i| format!("sq{i}")).collect());
    let mut rows: Vec<Vec<f64>> = boards
        .iter()
        .map(|bd| bd.iter().flat_map(|&c| [EMPTY, X, O].map(|m| if c == m { 1.0 } else { 0.0 })).collect())
        .collect();
    rows.push(vec![-1.0; 27]);
    RawEnv { mdp: b.build(), features: FeatureMatrix::new(feature_names(), rows).expect("well-formed rows") }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, test_util::max_row_error, EnvName, EnvSpec};

    #[test]
    fn state_count() {
        let (mdp, features) = build_env(&EnvSpec::new(EnvName::TictactoeVsRandom)).unwrap();
        assert_eq!((mdp.n_states, mdp.n_actions), (2424, 9));
        assert_eq!(features.n_features(), 27);
        assert!(max_row_error(&mdp) < 1e-9);
    }

    #[test]
    fn occupied_square_is_a_no_op() {
        let mut board = [EMPTY; 9];
        board[4] = X;
        board[0] = O;
        let out = play(&board, 4, 0.0);
        assert!(matches!(out.as_slice(), [(Outcome::Board(b), p)] if *b == board && *p == 1.0));
    }

    #[test]
    fn completing_a_line_wins() {
        let board = [X, X, EMPTY, O, O, EMPTY, EMPTY, EMPTY, EMPTY];
        assert!(matches!(play(&board, 2, 0.0).as_slice(), [(Outcome::Over(r), _)] if *r == WIN));
    }

    #[test]
    fn draw_reward_override() {
        // X fills the last square without winning.
        let board = [X, O, X, X, O, O, O, X, EMPTY];
        assert!(matches!(play(&board, 8, 0.25).as_slice(), [(Outcome::Over(r), _)] if *r == 0.25));
    }
}
