//! Optimal decision-tree policies for tabular MDPs.
//!
//! [`envs`] generates benchmark MDPs, [`mdp`] solves and evaluates them,
//! [`tree`] represents and brute-forces tree policies, [`milp`] builds and
//! solves the mixed-integer program for optimal trees, [`viper`] provides the
//! imitation-learning baseline and [`harness`] runs experiments.

pub mod envs;
pub mod harness;
pub mod mdp;
pub mod milp;
pub mod tree;
pub mod viper;
