//! Network of machines that fail and recover depending on their neighbours.
//!
//! A state is a bitmask of running machines. Actions reboot one machine or
//! wait (the last action). Each step pays one per running machine, minus the
//! reboot cost.

use super::{EnvError, EnvName, EnvSpec, FeatureMatrix, RawEnv, GAMMA};
use crate::mdp::MdpBuilder;

const REBOOT_COST: f64 = 0.45;
/// Bitmask state spaces beyond this size are rejected.
const MAX_MACHINES: usize = 12;

/// Probability that a machine is running next step when it is not rebooted.
pub fn sysadmin_on_probability(status: u8, ratio_on_neighbors: f64) -> f64 {
    ratio_on_neighbors * (0.05 + 0.9 * status as f64)
}

/// An undirected machine graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub machines: usize,
    pub edges: Vec<(usize, usize)>,
}

impl Topology {
    /// Complete binary tree on seven machines.
    pub fn tree() -> Self {
        Self { machines: 7, edges: vec![(0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (2, 6)] }
    }

    pub fn random1() -> Self {
        Self {
            machines: 8,
            edges: vec![(0, 1), (0, 4), (1, 2), (1, 5), (2, 3), (3, 7), (4, 6), (5, 6), (6, 7)],
        }
    }

    pub fn random2() -> Self {
        Self {
            machines: 8,
            edges: vec![(0, 1), (0, 2), (0, 5), (1, 3), (2, 4), (2, 6), (3, 7), (4, 5), (5, 7), (6, 7), (1, 6)],
        }
    }

    pub fn for_env(name: EnvName) -> Option<Self> {
        match name {
            EnvName::Sysadmin1 => Some(Self::random1()),
            EnvName::Sysadmin2 => Some(Self::random2()),
            EnvName::SysadminTree => Some(Self::tree()),
            _ => None,
        }
    }

    /// Parses `"0-1,1-2,..."`.
    pub fn parse_edges(machines: usize, text: &str) -> Result<Self, EnvError> {
        let bad = |reason: String| EnvError::InvalidOverride { key: "edges".into(), reason };
        let mut edges = Vec::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (a, b) = item.split_once('-').ok_or_else(|| bad(format!("`{item}` is not of the form i-j")))?;
            let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| bad(format!("`{v}` is not a machine index")));
            let (a, b) = (parse(a)?, parse(b)?);
            if a >= machines || b >= machines || a == b {
                return Err(bad(format!("edge {a}-{b} is invalid for {machines} machines")));
            }
            edges.push((a, b));
        }
        Ok(Self { machines, edges })
    }

    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.machines];
        for &(a, b) in &self.edges {
            if !adj[a].contains(&b) {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        adj
    }
}

fn topology(spec: &EnvSpec) -> Result<Topology, EnvError> {
    let default = Topology::for_env(spec.name).expect("sysadmin environment");
    let machines = match spec.overrides.get("machines") {
        Some(m) => m
            .parse::<usize>()
            .ok()
            .filter(|&m| (1..=MAX_MACHINES).contains(&m))
            .ok_or_else(|| EnvError::InvalidOverride {
                key: "machines".into(),
                reason: format!("`{m}` must be an integer in 1..={MAX_MACHINES}"),
            })?,
        None => default.machines,
    };
    match spec.overrides.get("edges") {
        Some(text) => Topology::parse_edges(machines, text),
        None if machines == default.machines => Ok(default),
        None => Err(EnvError::InvalidOverride {
            key: "machines".into(),
            reason: "changing the machine count requires an `edges` override".into(),
        }),
    }
}

pub(crate) fn generate(spec: &EnvSpec) -> Result<RawEnv, EnvError> {
    let topo = topology(spec)?;
    let n = topo.machines;
    let adj = topo.neighbours();
    let n_states = 1usize << n;
    let wait = n;
    let mut b = MdpBuilder::new(spec.name.as_str(), n_states, n + 1, GAMMA);
    let mut on_prob = vec![0.0; n];
    for s in 0..n_states {
        let status = |i: usize| ((s >> i) & 1) as u8;
        let running = s.count_ones() as f64;
        for (i, p) in on_prob.iter_mut().enumerate() {
            let ratio = if adj[i].is_empty() {
                1.0
            } else {
                adj[i].iter().filter(|&&j| status(j) == 1).count() as f64 / adj[i].len() as f64
            };
            *p = sysadmin_on_probability(status(i), ratio);
        }
        for a in 0..=n {
            let reward = running - if a == wait { 0.0 } else { REBOOT_COST };
            for next in 0..n_states {
                let mut p = 1.0;
                for (i, &q) in on_prob.iter().enumerate() {
                    let on = (next >> i) & 1 == 1;
                    p *= match (i == a, on) {
                        (true, true) => 1.0,
                        (true, false) => 0.0,
                        (false, true) => q,
                        (false, false) => 1.0 - q,
                    };
                }
                if p > 0.0 {
                    b.add(s, a, next, p, reward);
                }
            }
        }
    }
    let mut actions: Vec<String> = (0..n).map(|i| format!("reboot_{i}")).collect();
    actions.push("wait".into());
    b.initial(n_states - 1, 1.0)
        .state_labels((0..n_states).map(|s| format!("{s:0n$b}")).collect())
        .action_labels(actions);
    let rows = (0..n_states).map(|s| (0..n).map(|i| ((s >> i) & 1) as f64).collect()).collect();
    Ok(RawEnv {
        mdp: b.build(),
        features: FeatureMatrix::new((0..n).map(|i| format!("m{i}")).collect(), rows)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, test_util::max_row_error};

    #[test]
    fn on_probability() {
        assert!((sysadmin_on_probability(1, 1.0) - 0.95).abs() < 1e-15);
        assert!((sysadmin_on_probability(0, 1.0) - 0.05).abs() < 1e-15);
        assert_eq!(sysadmin_on_probability(0, 0.0), 0.0);
        assert_eq!(sysadmin_on_probability(1, 0.0), 0.0);
    }

    #[test]
    fn sizes() {
        for (name, n, a) in [(EnvName::Sysadmin1, 256, 9), (EnvName::Sysadmin2, 256, 9), (EnvName::SysadminTree, 128, 8)] {
            let (mdp, features) = build_env(&EnvSpec::new(name)).unwrap();
            assert_eq!((mdp.n_states, mdp.n_actions), (n, a));
            assert_eq!(features.n_features(), a - 1);
            assert!(max_row_error(&mdp) < 1e-9);
        }
    }

    #[test]
    fn reboot_turns_machine_on() {
        let (mdp, _) = build_env(&EnvSpec::new(EnvName::SysadminTree)).unwrap();
        // All machines down, reboot machine 0: next state always has bit 0 set.
        assert!(mdp.row(0, 0).iter().all(|t| t.next & 1 == 1));
        // With everything down, nothing else can come back.
        assert_eq!(mdp.row(0, 0).len(), 1);
        assert!((mdp.expected_reward(0, 0) + 0.45).abs() < 1e-15);
    }

    #[test]
    fn edge_override() {
        let spec = EnvSpec::new(EnvName::Sysadmin1).with_override("machines", "3").with_override("edges", "0-1,1-2");
        let (mdp, _) = build_env(&spec).unwrap();
        assert_eq!((mdp.n_states, mdp.n_actions), (8, 4));
        let spec = EnvSpec::new(EnvName::Sysadmin1).with_override("edges", "0-9");
        assert!(matches!(build_env(&spec), Err(EnvError::InvalidOverride { .. })));
    }
}
