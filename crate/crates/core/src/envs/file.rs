//! Line-oriented text format for MDPs with their feature matrices.
//!
//! ```text
//! omdt-mdp 1
//! name frozenlake_4x4
//! gamma 9.8999999999999999e-1
//! n_states 16
//! n_actions 4
//! p0 1
//! 0 1.0000000000000000e0
//! transitions 192
//! 0 0 0 6.6666666666666663e-1 0.0000000000000000e0
//! ...
//! feature_names 2
//! row
//! col
//! features
//! 0.0000000000000000e0 0.0000000000000000e0
//! ...
//! action_labels 4
//! left
//! ...
//! checksum sha256 <hex digest of every preceding byte>
//! ```
//!
//! Floats are written with 17 significant digits so reading gives back the
//! exact bit pattern. `action_labels` and `state_labels` are optional.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{EnvError, FeatureMatrix};
use crate::mdp::{validate, TabularMdp, Transition};

const MAGIC: &str = "omdt-mdp 1";

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn mdp_to_string(mdp: &TabularMdp, features: &FeatureMatrix) -> String {
    let mut out = String::new();
    let w = &mut out;
    // Writing into a String cannot fail.
    let _ = writeln!(w, "{MAGIC}");
    let _ = writeln!(w, "name {}", mdp.name);
    let _ = writeln!(w, "gamma {}", float(mdp.gamma));
    let _ = writeln!(w, "n_states {}", mdp.n_states);
    let _ = writeln!(w, "n_actions {}", mdp.n_actions);
    let support: Vec<(usize, f64)> = mdp.p0.iter().copied().enumerate().filter(|(_, p)| *p != 0.0).collect();
    let _ = writeln!(w, "p0 {}", support.len());
    for (s, p) in support {
        let _ = writeln!(w, "{s} {}", float(p));
    }
    let _ = writeln!(w, "transitions {}", mdp.n_transitions());
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            for t in mdp.row(s, a) {
                let _ = writeln!(w, "{s} {a} {} {} {}", t.next, float(t.prob), float(t.reward));
            }
        }
    }
    let _ = writeln!(w, "feature_names {}", features.n_features());
    for name in features.names() {
        let _ = writeln!(w, "{name}");
    }
    let _ = writeln!(w, "features");
    for r in 0..features.n_rows() {
        let row: Vec<String> = features.row(r).iter().map(|&v| float(v)).collect();
        let _ = writeln!(w, "{}", row.join(" "));
    }
    for (key, labels) in [("action_labels", &mdp.action_labels), ("state_labels", &mdp.state_labels)] {
        if let Some(labels) = labels {
            let _ = writeln!(w, "{key} {}", labels.len());
            for l in labels {
                let _ = writeln!(w, "{l}");
            }
        }
    }
    let sum = digest(&out);
    let _ = writeln!(out, "checksum sha256 {sum}");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl Into<String>) -> EnvError {
        EnvError::Malformed { line: self.line, msg: msg.into() }
    }

    fn next(&mut self) -> Result<&'a str, EnvError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(EnvError::Malformed { line: self.line + 1, msg: "unexpected end of file".into() }),
        }
    }

    fn peek_key(&self) -> Option<&'a str> {
        self.inner.clone().next().and_then(|(_, l)| l.split(' ').next())
    }

    /// Reads `<key> <value>` and returns the value text.
    fn field(&mut self, key: &str) -> Result<&'a str, EnvError> {
        let line = self.next()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v),
            _ if line == key => Ok(""),
            _ => Err(self.err(format!("expected `{key}`, found `{line}`"))),
        }
    }

    fn parse<T: std::str::FromStr>(&self, text: &str, what: &str) -> Result<T, EnvError> {
        text.trim().parse().map_err(|_| self.err(format!("invalid {what} `{text}`")))
    }

    fn count(&mut self, key: &str) -> Result<usize, EnvError> {
        let v = self.field(key)?;
        self.parse(v, key)
    }

    fn strings(&mut self, n: usize) -> Result<Vec<String>, EnvError> {
        (0..n).map(|_| self.next().map(str::to_string)).collect()
    }
}

pub fn mdp_from_str(text: &str) -> Result<(TabularMdp, FeatureMatrix), EnvError> {
    let body_end = text.trim_end_matches('\n').rfind('\n').map(|i| i + 1).unwrap_or(0);
    let (body, trailer) = text.split_at(body_end);
    let expected = trailer
        .trim_end()
        .strip_prefix("checksum sha256 ")
        .ok_or_else(|| EnvError::Malformed { line: body.lines().count() + 1, msg: "missing checksum line".into() })?;
    let actual = digest(body);
    if expected != actual {
        return Err(EnvError::Checksum { expected: expected.to_string(), actual });
    }

    let mut it = Lines { inner: body.lines().enumerate(), line: 0 };
    if it.next()? != MAGIC {
        return Err(it.err(format!("expected header `{MAGIC}`")));
    }
    let name = it.field("name")?.to_string();
    let gamma: f64 = {
        let v = it.field("gamma")?;
        it.parse(v, "gamma")?
    };
    let n_states = it.count("n_states")?;
    let n_actions = it.count("n_actions")?;

    let mut p0 = vec![0.0; n_states];
    for _ in 0..it.count("p0")? {
        let line = it.next()?;
        let (s, p) = line.split_once(' ').ok_or_else(|| it.err("expected `state probability`"))?;
        let s: usize = it.parse(s, "state")?;
        if s >= n_states {
            return Err(it.err(format!("state {s} out of range")));
        }
        p0[s] = it.parse(p, "probability")?;
    }

    let mut transitions = vec![Vec::new(); n_states * n_actions];
    for _ in 0..it.count("transitions")? {
        let line = it.next()?;
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 5 {
            return Err(it.err("expected `s a next prob reward`"));
        }
        let s: usize = it.parse(parts[0], "state")?;
        let a: usize = it.parse(parts[1], "action")?;
        let next: usize = it.parse(parts[2], "state")?;
        if s >= n_states || next >= n_states || a >= n_actions {
            return Err(it.err("index out of range"));
        }
        let prob = it.parse(parts[3], "probability")?;
        let reward = it.parse(parts[4], "reward")?;
        transitions[s * n_actions + a].push(Transition { next, prob, reward });
    }

    let n_features = it.count("feature_names")?;
    let names = it.strings(n_features)?;
    it.field("features")?;
    let mut rows = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        let line = it.next()?;
        let row: Vec<f64> = line
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|v| it.parse(v, "feature value"))
            .collect::<Result<_, _>>()?;
        rows.push(row);
    }
    let features = FeatureMatrix::new(names, rows)?;

    let mut action_labels = None;
    let mut state_labels = None;
    while let Some(key) = it.peek_key() {
        match key {
            "action_labels" if action_labels.is_none() => {
                let n = it.count(key)?;
                action_labels = Some(it.strings(n)?);
            }
            "state_labels" if state_labels.is_none() => {
                let n = it.count(key)?;
                state_labels = Some(it.strings(n)?);
            }
            other => {
                it.next()?;
                return Err(it.err(format!("unexpected section `{other}`")));
            }
        }
    }

    let mdp = TabularMdp { name, n_states, n_actions, transitions, p0, gamma, state_labels, action_labels };
    let violations = validate(&mdp);
    if !violations.is_empty() {
        return Err(EnvError::Invalid(violations));
    }
    Ok((mdp, features))
}

pub fn write_mdp_file(mdp: &TabularMdp, features: &FeatureMatrix, path: impl AsRef<Path>) -> Result<(), EnvError> {
    fs::write(path, mdp_to_string(mdp, features))?;
    Ok(())
}

pub fn read_mdp_file(path: impl AsRef<Path>) -> Result<(TabularMdp, FeatureMatrix), EnvError> {
    mdp_from_str(&fs::read_to_string(path)?)
}
