//! Free-format MPS export and import.
//!
//! Binaries are written inside `INTORG` marker blocks with `BV` bounds;
//! integers get explicit `LO`/`UP` bounds inside the markers. Numbers use the
//! shortest representation that parses back to the same `f64`, so
//! `model_from_mps(model_to_mps(m)) == m` for any model whose constraint terms
//! are sorted by variable index.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Constraint, MilpError, MilpModel, Relation, VarKind, Variable};

const OBJ_ROW: &str = "obj";

fn num(x: f64) -> String {
    if x == f64::INFINITY {
        "1e30".into()
    } else if x == f64::NEG_INFINITY {
        "-1e30".into()
    } else {
        format!("{x}")
    }
}

pub fn model_to_mps(model: &MilpModel) -> String {
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); model.variables.len()];
    for (r, c) in model.constraints.iter().enumerate() {
        for &(v, a) in &c.terms {
            columns[v].push((r, a));
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "NAME {}", model.name);
    let _ = writeln!(out, "OBJSENSE\n    {}", if model.maximize { "MAX" } else { "MIN" });
    let _ = writeln!(out, "ROWS\n N {OBJ_ROW}");
    for c in &model.constraints {
        let kind = match c.relation {
            Relation::Le => 'L',
            Relation::Eq => 'E',
            Relation::Ge => 'G',
        };
        let _ = writeln!(out, " {kind} {}", c.name);
    }
    out.push_str("COLUMNS\n");
    let mut in_marker = false;
    let mut marker = 0;
    for (v, var) in model.variables.iter().enumerate() {
        let integral = var.kind != VarKind::Continuous;
        if integral != in_marker {
            let tag = if integral { "INTORG" } else { "INTEND" };
            let _ = writeln!(out, "    MARKER{marker} 'MARKER' '{tag}'");
            marker += usize::from(!integral);
            in_marker = integral;
        }
        if var.objective != 0.0 || columns[v].is_empty() {
            let _ = writeln!(out, "    {} {OBJ_ROW} {}", var.name, num(var.objective));
        }
        for &(r, a) in &columns[v] {
            let _ = writeln!(out, "    {} {} {}", var.name, model.constraints[r].name, num(a));
        }
    }
    if in_marker {
        let _ = writeln!(out, "    MARKER{marker} 'MARKER' 'INTEND'");
    }
    out.push_str("RHS\n");
    for c in model.constraints.iter().filter(|c| c.rhs != 0.0) {
        let _ = writeln!(out, "    RHS {} {}", c.name, num(c.rhs));
    }
    out.push_str("BOUNDS\n");
    for var in &model.variables {
        match var.kind {
            VarKind::Binary => {
                let _ = writeln!(out, " BV BND {}", var.name);
            }
            _ => {
                if var.lower == f64::NEG_INFINITY && var.upper == f64::INFINITY {
                    let _ = writeln!(out, " FR BND {}", var.name);
                    continue;
                }
                if var.lower == f64::NEG_INFINITY {
                    let _ = writeln!(out, " MI BND {}", var.name);
                } else {
                    let _ = writeln!(out, " LO BND {} {}", var.name, num(var.lower));
                }
                if var.upper == f64::INFINITY {
                    let _ = writeln!(out, " PL BND {}", var.name);
                } else {
                    let _ = writeln!(out, " UP BND {} {}", var.name, num(var.upper));
                }
            }
        }
    }
    out.push_str("ENDATA\n");
    out
}

#[derive(PartialEq, Clone, Copy)]
enum Section {
    None,
    ObjSense,
    Rows,
    Columns,
    Rhs,
    Bounds,
    Ranges,
}

fn parse_num(text: &str, line: usize) -> Result<f64, MilpError> {
    let v: f64 = text.parse().map_err(|_| MilpError::Mps { line, msg: format!("invalid number `{text}`") })?;
    Ok(if v >= 1e30 {
        f64::INFINITY
    } else if v <= -1e30 {
        f64::NEG_INFINITY
    } else {
        v
    })
}

pub fn model_from_mps(text: &str) -> Result<MilpModel, MilpError> {
    let mut model = MilpModel::new("", false);
    let mut section = Section::None;
    let mut row_index: HashMap<String, usize> = HashMap::new();
    let mut col_index: HashMap<String, usize> = HashMap::new();
    let mut obj_name: Option<String> = None;
    let mut integral = false;
    // Whether each column received any BOUNDS entry.
    let mut explicit_bounds = vec![];

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |msg: String| MilpError::Mps { line, msg };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('*') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if !raw.starts_with([' ', '\t']) {
            section = match fields[0] {
                "NAME" => {
                    model.name = fields.get(1).map(|s| s.to_string()).unwrap_or_default();
                    Section::None
                }
                "OBJSENSE" => match fields.get(1) {
                    Some(&sense) => {
                        model.maximize = sense == "MAX" || sense == "MAXIMIZE";
                        Section::None
                    }
                    None => Section::ObjSense,
                },
                "ROWS" => Section::Rows,
                "COLUMNS" => Section::Columns,
                "RHS" => Section::Rhs,
                "BOUNDS" => Section::Bounds,
                "RANGES" => Section::Ranges,
                "ENDATA" => break,
                other => return Err(err(format!("unknown section `{other}`"))),
            };
            continue;
        }
        match section {
            Section::ObjSense => {
                model.maximize = matches!(fields[0], "MAX" | "MAXIMIZE");
            }
            Section::Rows => {
                let &[kind, name] = &fields[..] else { return Err(err("expected `type name`".into())) };
                let relation = match kind {
                    "N" => {
                        if obj_name.is_none() {
                            obj_name = Some(name.to_string());
                        }
                        continue;
                    }
                    "L" => Relation::Le,
                    "E" => Relation::Eq,
                    "G" => Relation::Ge,
                    _ => return Err(err(format!("unknown row type `{kind}`"))),
                };
                if row_index.insert(name.to_string(), model.constraints.len()).is_some() {
                    return Err(err(format!("duplicate row `{name}`")));
                }
                model.constraints.push(Constraint { name: name.to_string(), terms: Vec::new(), relation, rhs: 0.0 });
            }
            Section::Columns => {
                if fields.get(1) == Some(&"'MARKER'") {
                    integral = match fields.get(2) {
                        Some(&"'INTORG'") => true,
                        Some(&"'INTEND'") => false,
                        _ => return Err(err("unknown marker".into())),
                    };
                    continue;
                }
                if fields.len() < 3 || fields.len() % 2 == 0 {
                    return Err(err("expected `column row value [row value]`".into()));
                }
                let name = fields[0];
                let v = match col_index.get(name) {
                    Some(&v) => v,
                    None => {
                        let kind = if integral { VarKind::Integer } else { VarKind::Continuous };
                        let upper = f64::INFINITY;
                        model.variables.push(Variable { name: name.to_string(), kind, lower: 0.0, upper, objective: 0.0 });
                        explicit_bounds.push(false);
                        col_index.insert(name.to_string(), model.variables.len() - 1);
                        model.variables.len() - 1
                    }
                };
                for pair in fields[1..].chunks(2) {
                    let value = parse_num(pair[1], line)?;
                    if Some(pair[0]) == obj_name.as_deref() {
                        model.variables[v].objective = value;
                    } else {
                        let &r = row_index.get(pair[0]).ok_or_else(|| err(format!("unknown row `{}`", pair[0])))?;
                        model.constraints[r].terms.push((v, value));
                    }
                }
            }
            Section::Rhs => {
                if fields.len() < 3 || fields.len() % 2 == 0 {
                    return Err(err("expected `set row value [row value]`".into()));
                }
                for pair in fields[1..].chunks(2) {
                    let value = parse_num(pair[1], line)?;
                    if Some(pair[0]) == obj_name.as_deref() {
                        continue;
                    }
                    let &r = row_index.get(pair[0]).ok_or_else(|| err(format!("unknown row `{}`", pair[0])))?;
                    model.constraints[r].rhs = value;
                }
            }
            Section::Bounds => {
                if fields.len() < 3 {
                    return Err(err("expected `type set column [value]`".into()));
                }
                let &v = col_index.get(fields[2]).ok_or_else(|| err(format!("unknown column `{}`", fields[2])))?;
                let value = fields.get(3).map(|t| parse_num(t, line)).transpose()?;
                let need = |value: Option<f64>| value.ok_or_else(|| err(format!("bound {} needs a value", fields[0])));
                let var = &mut model.variables[v];
                explicit_bounds[v] = true;
                match fields[0] {
                    "UP" => var.upper = need(value)?,
                    "LO" => var.lower = need(value)?,
                    "FX" => {
                        var.lower = need(value)?;
                        var.upper = var.lower;
                    }
                    "FR" => {
                        var.lower = f64::NEG_INFINITY;
                        var.upper = f64::INFINITY;
                    }
                    "MI" => var.lower = f64::NEG_INFINITY,
                    "PL" => var.upper = f64::INFINITY,
                    "BV" => {
                        var.kind = VarKind::Binary;
                        var.lower = 0.0;
                        var.upper = 1.0;
                    }
                    other => return Err(err(format!("unsupported bound type `{other}`"))),
                }
            }
            Section::Ranges => return Err(err("RANGES are not supported".into())),
            Section::None => return Err(err("data outside of a section".into())),
        }
    }
    // Marker-delimited columns without bounds are binaries by convention.
    for (var, explicit) in model.variables.iter_mut().zip(explicit_bounds) {
        if var.kind == VarKind::Integer && !explicit {
            var.kind = VarKind::Binary;
            var.upper = 1.0;
        }
    }
    Ok(model)
}

pub fn write_mps(model: &MilpModel, path: impl AsRef<Path>) -> Result<(), MilpError> {
    fs::write(path, model_to_mps(model))?;
    Ok(())
}

pub fn read_mps(path: impl AsRef<Path>) -> Result<MilpModel, MilpError> {
    model_from_mps(&fs::read_to_string(path)?)
}
