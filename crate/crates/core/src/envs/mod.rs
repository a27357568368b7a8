//! Generators for the benchmark MDPs and the portable MDP text format.
//!
//! Every generator enumerates a raw state space, attaches one feature row per
//! state and then drops unreachable states, so the returned MDP and feature
//! matrix always have matching row counts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{prune_unreachable, validate, MdpError, TabularMdp, Violation};

mod blackjack;
mod file;
mod frozenlake;
mod inventory;
mod navigation;
mod sysadmin;
mod tictactoe;
mod tiger;
mod traffic;
mod xor;

pub use file::{mdp_from_str, mdp_to_string, read_mdp_file, write_mdp_file};
pub use frozenlake::{frozenlake_step_distribution, Direction, FROZENLAKE_12X12, FROZENLAKE_4X4, FROZENLAKE_8X8};
pub use sysadmin::{sysadmin_on_probability, Topology};
pub use xor::xor_reward;

/// Discount used by every benchmark environment.
pub const GAMMA: f64 = 0.99;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown environment `{0}`")]
    UnknownName(String),
    #[error("invalid override `{key}`: {reason}")]
    InvalidOverride { key: String, reason: String },
    #[error("frozenlake step requested on terminal tile {0:?}")]
    TerminalTile((usize, usize)),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("malformed MDP file at line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("checksum mismatch: file says {expected}, content hashes to {actual}")]
    Checksum { expected: String, actual: String },
    #[error("MDP fails validation: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("feature matrix: {0}")]
    Features(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-state observation vectors used by split predicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    names: Vec<String>,
    n_rows: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, EnvError> {
        let width = names.len();
        let mut values = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(EnvError::Features(format!("row {i} has {} values, expected {width}", row.len())));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(EnvError::Features(format!("row {i} contains non-finite value {v}")));
            }
            values.extend_from_slice(row);
        }
        Ok(Self { names, n_rows: rows.len(), values })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.names.len();
        &self.values[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn get(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.names.len() + feature]
    }

    pub fn column(&self, feature: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_rows).map(move |r| self.get(r, feature))
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.names.len());
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        Self { names: self.names.clone(), n_rows: rows.len(), values }
    }
}

/// The thirteen benchmark environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EnvName {
    Navigation3d,
    Blackjack,
    FrozenLake4x4,
    FrozenLake8x8,
    FrozenLake12x12,
    Inventory,
    Sysadmin1,
    Sysadmin2,
    SysadminTree,
    TictactoeVsRandom,
    TigerVsAntelope,
    TrafficIntersection,
    Xor,
}

impl EnvName {
    pub const ALL: [EnvName; 13] = [
        EnvName::Navigation3d,
        EnvName::Blackjack,
        EnvName::FrozenLake4x4,
        EnvName::FrozenLake8x8,
        EnvName::FrozenLake12x12,
        EnvName::Inventory,
        EnvName::Sysadmin1,
        EnvName::Sysadmin2,
        EnvName::SysadminTree,
        EnvName::TictactoeVsRandom,
        EnvName::TigerVsAntelope,
        EnvName::TrafficIntersection,
        EnvName::Xor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::Navigation3d => "3d_navigation",
            EnvName::Blackjack => "blackjack",
            EnvName::FrozenLake4x4 => "frozenlake_4x4",
            EnvName::FrozenLake8x8 => "frozenlake_8x8",
            EnvName::FrozenLake12x12 => "frozenlake_12x12",
            EnvName::Inventory => "inventory",
            EnvName::Sysadmin1 => "sysadmin_1",
            EnvName::Sysadmin2 => "sysadmin_2",
            EnvName::SysadminTree => "sysadmin_tree",
            EnvName::TictactoeVsRandom => "tictactoe_vs_random",
            EnvName::TigerVsAntelope => "tiger_vs_antelope",
            EnvName::TrafficIntersection => "traffic_intersection",
            EnvName::Xor => "xor",
        }
    }

    /// Whether the generator output depends on [`EnvSpec::seed`].
    pub fn is_seeded(self) -> bool {
        matches!(self, EnvName::Navigation3d | EnvName::Xor)
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvName {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "inventory_management" {
            return Ok(EnvName::Inventory);
        }
        EnvName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| EnvError::UnknownName(s.to_string()))
    }
}

/// What to generate: environment, seed and optional parameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: EnvName,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub overrides: BTreeMap<String, String>,
}

impl EnvSpec {
    pub fn new(name: EnvName) -> Self {
        Self { name, seed: 0, overrides: BTreeMap::new() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_override(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.overrides.insert(key.into(), value.into());
        self
    }

    fn check_overrides(&self, allowed: &[&str]) -> Result<(), EnvError> {
        match self.overrides.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(EnvError::InvalidOverride {
                key: k.clone(),
                reason: format!("{} accepts only {:?}", self.name, allowed),
            }),
            None => Ok(()),
        }
    }

    pub(crate) fn override_f64(&self, key: &str) -> Result<Option<f64>, EnvError> {
        self.overrides
            .get(key)
            .map(|v| {
                v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| EnvError::InvalidOverride {
                    key: key.to_string(),
                    reason: format!("`{v}` is not a finite number"),
                })
            })
            .transpose()
    }
}

/// Raw generator output before reachability pruning.
pub(crate) struct RawEnv {
    pub mdp: TabularMdp,
    pub features: FeatureMatrix,
}

/// Builds the pruned MDP and its feature matrix.
pub fn build_env(spec: &EnvSpec) -> Result<(TabularMdp, FeatureMatrix), EnvError> {
    let raw = match spec.name {
        EnvName::FrozenLake4x4 | EnvName::FrozenLake8x8 | EnvName::FrozenLake12x12 => {
            spec.check_overrides(&["map"])?;
            frozenlake::generate(spec)?
        }
        EnvName::Navigation3d => {
            spec.check_overrides(&[])?;
            navigation::generate(spec.seed)
        }
        EnvName::Blackjack => {
            spec.check_overrides(&[])?;
            blackjack::generate()
        }
        EnvName::Inventory => {
            spec.check_overrides(&[])?;
            inventory::generate()
        }
        EnvName::Sysadmin1 | EnvName::Sysadmin2 | EnvName::SysadminTree => {
            spec.check_overrides(&["edges", "machines"])?;
            sysadmin::generate(spec)?
        }
        EnvName::TictactoeVsRandom => {
            spec.check_overrides(&["draw_reward"])?;
            tictactoe::generate(spec.override_f64("draw_reward")?.unwrap_or(0.0))
        }
        EnvName::TigerVsAntelope => {
            spec.check_overrides(&["step_cost"])?;
            tiger::generate(spec.override_f64("step_cost")?.unwrap_or(tiger::STEP_COST))
        }
        EnvName::TrafficIntersection => {
            spec.check_overrides(&[])?;
            traffic::generate()
        }
        EnvName::Xor => {
            spec.check_overrides(&[])?;
            xor::generate(spec.seed)
        }
    };
    let pruned = prune_unreachable(&raw.mdp, &raw.features)?;
    let violations = validate(&pruned.mdp);
    if !violations.is_empty() {
        return Err(EnvError::Invalid(violations));
    }
    Ok((pruned.mdp, pruned.features))
}
