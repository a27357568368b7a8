//! Simplified blackjack against a dealer drawing from an infinite deck.
//!
//! Phases: dealing (no decision), the player's turn (skip or hit), and the
//! dealer's turn, during which the dealer draws while their total is 17 or
//! less. Player busts go to a `bust` state, resolved games to `end`; both are
//! absorbing and carry sentinel features.

use super::{FeatureMatrix, RawEnv, GAMMA};
use crate::mdp::MdpBuilder;

const SKIP: usize = 0;
const HIT: usize = 1;
const SENTINEL: f64 = -1.0;
const BUST_TOTAL: f64 = 22.0;
/// Dealer keeps drawing while the total is at most this value.
const DEALER_DRAWS_TO: u32 = 17;

/// Card values with aces fixed at 11; tens include face cards.
fn card_distribution() -> [(u32, f64); 10] {
    let mut cards = [(0, 0.0); 10];
    for (i, v) in (2..=11).enumerate() {
        cards[i] = (v, if v == 10 { 4.0 / 13.0 } else { 1.0 / 13.0 });
    }
    cards
}

fn outcome(player: u32, dealer: u32) -> f64 {
    let win = if player == 21 { 1.5 } else { 1.0 };
    if dealer > 21 || player > dealer {
        win
    } else if player == dealer {
        0.0
    } else {
        -1.0
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum State {
    Start,
    /// Dealer holds one card, player none.
    Dealt(u32),
    Player { total: u32, dealer: u32 },
    Dealer { player: u32, dealer: u32 },
    Bust,
    End,
}

impl State {
    fn features(self) -> [f64; 3] {
        match self {
            State::Start => [0.0, 0.0, 0.0],
            State::Dealt(d) => [0.0, d as f64, 0.0],
            State::Player { total, dealer } => [total as f64, dealer as f64, 0.0],
            State::Dealer { player, dealer } => [player as f64, dealer as f64, 1.0],
            State::Bust => [BUST_TOTAL, SENTINEL, SENTINEL],
            State::End => [SENTINEL; 3],
        }
    }
}

fn raw_states() -> Vec<State> {
    let mut states = vec![State::Start];
    states.extend((2..=11).map(State::Dealt));
    for total in 2..=21 {
        for dealer in 2..=11 {
            states.push(State::Player { total, dealer });
        }
    }
    for player in 2..=21 {
        for dealer in 2..=DEALER_DRAWS_TO {
            states.push(State::Dealer { player, dealer });
        }
    }
    states.push(State::Bust);
    states.push(State::End);
    states
}

pub(crate) fn generate() -> RawEnv {
    let states = raw_states();
    let index = |st: State| states.iter().position(|&s| s == st).expect("state enumerated");
    let cards = card_distribution();
    let mut b = MdpBuilder::new("blackjack", states.len(), 2, GAMMA);
    for (s, &state) in states.iter().enumerate() {
        match state {
            State::Start => {
                for a in [SKIP, HIT] {
                    for &(c, p) in &cards {
                        b.add(s, a, index(State::Dealt(c)), p, 0.0);
                    }
                }
            }
            State::Dealt(dealer) => {
                for a in [SKIP, HIT] {
                    for &(c, p) in &cards {
                        b.add(s, a, index(State::Player { total: c, dealer }), p, 0.0);
                    }
                }
            }
            State::Player { total, dealer } => {
                b.add(s, SKIP, index(State::Dealer { player: total, dealer }), 1.0, 0.0);
                for &(c, p) in &cards {
                    if total + c > 21 {
                        b.add(s, HIT, index(State::Bust), p, -1.0);
                    } else {
                        b.add(s, HIT, index(State::Player { total: total + c, dealer }), p, 0.0);
                    }
                }
            }
            State::Dealer { player, dealer } => {
                for a in [SKIP, HIT] {
                    for &(c, p) in &cards {
                        let next = dealer + c;
                        if next <= DEALER_DRAWS_TO {
                            b.add(s, a, index(State::Dealer { player, dealer: next }), p, 0.0);
                        } else {
                            b.add(s, a, index(State::End), p, outcome(player, next));
                        }
                    }
                }
            }
            State::Bust | State::End => {
                b.absorbing(s);
            }
        }
    }
    b.initial(index(State::Start), 1.0)
        .state_labels(states.iter().map(|s| format!("{s:?}")).collect())
        .action_labels(vec!["skip".into(), "hit".into()]);
    let features = states.iter().map(|s| s.features().to_vec()).collect();
    RawEnv {
        mdp: b.build(),
        features: FeatureMatrix::new(
            vec!["player_total".into(), "dealer_total".into(), "phase".into()],
            features,
        )
        .expect("well-formed rows"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, test_util::max_row_error, EnvName, EnvSpec};

    #[test]
    fn deck_is_a_distribution() {
        let total: f64 = card_distribution().iter().map(|c| c.1).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn outcomes() {
        assert_eq!(outcome(20, 22), 1.0);
        assert_eq!(outcome(21, 19), 1.5);
        assert_eq!(outcome(21, 21), 0.0);
        assert_eq!(outcome(18, 18), 0.0);
        assert_eq!(outcome(17, 19), -1.0);
    }

    #[test]
    fn reachable_state_count() {
        let (mdp, features) = build_env(&EnvSpec::new(EnvName::Blackjack)).unwrap();
        assert_eq!((mdp.n_states, mdp.n_actions), (533, 2));
        assert_eq!(features.n_rows(), 533);
        assert!(max_row_error(&mdp) < 1e-9);
    }
}
