use super::{EnvError, EnvName, EnvSpec, FeatureMatrix, RawEnv, GAMMA};
use crate::mdp::MdpBuilder;

pub const FROZENLAKE_4X4: [&str; 4] = ["SFFF", "FHFH", "FFFH", "HFFG"];

pub const FROZENLAKE_8X8: [&str; 8] = [
    "SFFFFFFF", "FFFFFFFF", "FFFHFFFF", "FFFFFHFF", "FFFHFFFF", "FHHFFFHF", "FHFFHFHF", "FFFHFFFG",
];

pub const FROZENLAKE_12X12: [&str; 12] = [
    "SFFFFFFFFFFF",
    "FFFFFFFFFFFF",
    "FFFHFFFFFFFH",
    "FFFFFHFFFFFF",
    "FFFHFFFFFFFF",
    "FHHFFFHFFHFF",
    "FHFFHFHFFFFF",
    "FFFHFFFFFFFF",
    "FFFFFFFFHFFF",
    "HFFFFHFFFFHH",
    "FFFFFFGFFFFF",
    "FFFFFFFFFFFF",
];

/// Action order follows the usual frozenlake convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Left = 0,
    Down = 1,
    Right = 2,
    Up = 3,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Left, Direction::Down, Direction::Right, Direction::Up];

    pub fn from_index(i: usize) -> Direction {
        Self::ALL[i % 4]
    }

    fn label(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Down => "down",
            Direction::Right => "right",
            Direction::Up => "up",
        }
    }

    fn offset(self) -> (isize, isize) {
        match self {
            Direction::Left => (0, -1),
            Direction::Down => (1, 0),
            Direction::Right => (0, 1),
            Direction::Up => (-1, 0),
        }
    }
}

fn parse_map(rows: &[&str]) -> Result<Vec<Vec<u8>>, EnvError> {
    let grid: Vec<Vec<u8>> = rows.iter().map(|r| r.bytes().collect()).collect();
    let width = grid.first().map(Vec::len).unwrap_or(0);
    let bad = |reason: String| EnvError::InvalidOverride { key: "map".into(), reason };
    if width == 0 || grid.iter().any(|r| r.len() != width) {
        return Err(bad("map rows must be non-empty and equally long".into()));
    }
    if let Some(c) = grid.iter().flatten().find(|c| !b"SFHG".contains(c)) {
        return Err(bad(format!("unexpected tile `{}`", *c as char)));
    }
    if grid.iter().flatten().filter(|&&c| c == b'S').count() != 1 {
        return Err(bad("map needs exactly one start tile".into()));
    }
    Ok(grid)
}

fn is_terminal(tile: u8) -> bool {
    tile == b'H' || tile == b'G'
}

/// Successor cells of `action` taken at `cell`: the intended direction and its
/// two perpendicular neighbours, each with probability 1/3. Moves that leave
/// the grid keep the agent in place.
pub fn frozenlake_step_distribution(
    action: Direction,
    cell: (usize, usize),
    map: &[&str],
) -> Result<Vec<((usize, usize), f64)>, EnvError> {
    let grid = parse_map(map)?;
    step_distribution(action, cell, &grid)
}

fn step_distribution(
    action: Direction,
    (row, col): (usize, usize),
    grid: &[Vec<u8>],
) -> Result<Vec<((usize, usize), f64)>, EnvError> {
    if is_terminal(grid[row][col]) {
        return Err(EnvError::TerminalTile((row, col)));
    }
    let (rows, cols) = (grid.len() as isize, grid[0].len() as isize);
    let a = action as usize;
    let mut out: Vec<((usize, usize), f64)> = Vec::with_capacity(3);
    for dir in [(a + 3) % 4, a, (a + 1) % 4].map(Direction::from_index) {
        let (dr, dc) = dir.offset();
        let (r, c) = (row as isize + dr, col as isize + dc);
        let next = if (0..rows).contains(&r) && (0..cols).contains(&c) { (r as usize, c as usize) } else { (row, col) };
        match out.iter_mut().find(|(cell, _)| *cell == next) {
            Some(entry) => entry.1 += 1.0 / 3.0,
            None => out.push((next, 1.0 / 3.0)),
        }
    }
    Ok(out)
}

pub(crate) fn generate(spec: &EnvSpec) -> Result<RawEnv, EnvError> {
    let custom: Option<Vec<&str>> = spec.overrides.get("map").map(|m| m.split('/').collect());
    let rows: &[&str] = match (&custom, spec.name) {
        (Some(rows), _) => rows,
        (None, EnvName::FrozenLake4x4) => &FROZENLAKE_4X4,
        (None, EnvName::FrozenLake8x8) => &FROZENLAKE_8X8,
        _ => &FROZENLAKE_12X12,
    };
    let grid = parse_map(rows)?;
    let (n_rows, n_cols) = (grid.len(), grid[0].len());
    let idx = |r: usize, c: usize| r * n_cols + c;

    let mut b = MdpBuilder::new(spec.name.as_str(), n_rows * n_cols, 4, GAMMA);
    let mut features = Vec::with_capacity(n_rows * n_cols);
    let mut labels = Vec::with_capacity(n_rows * n_cols);
    for r in 0..n_rows {
        for c in 0..n_cols {
            let s = idx(r, c);
            features.push(vec![r as f64, c as f64]);
            labels.push(format!("({r},{c}){}", grid[r][c] as char));
            if grid[r][c] == b'S' {
                b.initial(s, 1.0);
            }
            if is_terminal(grid[r][c]) {
                b.absorbing(s);
                continue;
            }
            for dir in Direction::ALL {
                for ((nr, nc), p) in step_distribution(dir, (r, c), &grid)? {
                    let reward = if grid[nr][nc] == b'G' { 1.0 } else { 0.0 };
                    b.add(s, dir as usize, idx(nr, nc), p, reward);
                }
            }
        }
    }
    b.state_labels(labels).action_labels(Direction::ALL.iter().map(|d| d.label().to_string()).collect());
    Ok(RawEnv {
        mdp: b.build(),
        features: FeatureMatrix::new(vec!["row".into(), "col".into()], features)?,
    })
}
