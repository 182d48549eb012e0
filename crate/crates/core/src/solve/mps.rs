//! Fixed-format MPS writer and reader.
//!
//! Fields are laid out in the classic columns, but names longer than eight
//! characters and full-precision numbers are allowed to overflow their field;
//! the reader splits on whitespace. Names must not contain spaces.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use super::SolveError;
use crate::program::{
    canonical_terms, Constraint, Objective, ProgramDescription, Relation, Sense, Variable, PROGRAM_SCHEMA,
};

const OBJ_ROW: &str = "OBJ";

fn invalid(message: impl Into<String>) -> SolveError {
    SolveError::Io(std::io::Error::new(std::io::ErrorKind::InvalidInput, message.into()))
}

fn entry(out: &mut String, f1: &str, f2: &str, f3: &str, value: f64) {
    let _ = writeln!(out, " {f1:<2} {f2:<8}  {f3:<8}  {value:>12}");
}

/// Renders the program as MPS text.
pub fn write_mps(program: &ProgramDescription) -> Result<String, SolveError> {
    program.validate()?;
    let mut seen = HashSet::from([OBJ_ROW]);
    for name in program
        .constraints
        .iter()
        .map(|c| c.name.as_str())
        .chain(program.variables.iter().map(|v| v.name.as_str()))
    {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(invalid(format!("name {name:?} cannot be written to MPS")));
        }
    }
    for c in &program.constraints {
        if !seen.insert(c.name.as_str()) {
            return Err(invalid(format!("duplicate row name {:?}", c.name)));
        }
    }

    let mut out = String::new();
    out.push_str("NAME          BNWDRO\n");
    if program.objective.sense == Sense::Maximize {
        out.push_str("OBJSENSE\n    MAX\n");
    }
    out.push_str("ROWS\n");
    let _ = writeln!(out, " N  {OBJ_ROW}");
    for c in &program.constraints {
        let tag = match c.relation {
            Relation::Le => "L",
            Relation::Ge => "G",
            Relation::Eq => "E",
        };
        let _ = writeln!(out, " {tag}  {}", c.name);
    }

    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); program.num_variables()];
    for (i, c) in program.constraints.iter().enumerate() {
        for &(j, a) in &c.terms {
            columns[j].push((i, a));
        }
    }
    let mut obj = vec![0.0; program.num_variables()];
    for &(j, c) in &program.objective.terms {
        obj[j] = c;
    }

    out.push_str("COLUMNS\n");
    let mut in_marker = false;
    let mut markers = 0;
    for (j, v) in program.variables.iter().enumerate() {
        if v.integer != in_marker {
            let kind = if v.integer { "INTORG" } else { "INTEND" };
            let _ = writeln!(out, "    MARKER{markers:<4}          'MARKER'                 '{kind}'");
            markers += 1;
            in_marker = v.integer;
        }
        entry(&mut out, "", &v.name, OBJ_ROW, obj[j]);
        for &(i, a) in &columns[j] {
            entry(&mut out, "", &v.name, &program.constraints[i].name, a);
        }
    }
    if in_marker {
        let _ = writeln!(out, "    MARKER{markers:<4}          'MARKER'                 'INTEND'");
    }

    out.push_str("RHS\n");
    if program.objective.constant != 0.0 {
        entry(&mut out, "", "RHS", OBJ_ROW, -program.objective.constant);
    }
    for c in &program.constraints {
        if c.rhs != 0.0 {
            entry(&mut out, "", "RHS", &c.name, c.rhs);
        }
    }

    out.push_str("BOUNDS\n");
    for v in &program.variables {
        let (l, u) = (v.lower, v.upper);
        if l == u {
            entry(&mut out, "FX", "BND", &v.name, l);
            continue;
        }
        if l == f64::NEG_INFINITY && u == f64::INFINITY {
            let _ = writeln!(out, " FR BND       {}", v.name);
            continue;
        }
        if l == f64::NEG_INFINITY {
            let _ = writeln!(out, " MI BND       {}", v.name);
        } else if l != 0.0 {
            entry(&mut out, "LO", "BND", &v.name, l);
        }
        if u.is_finite() {
            entry(&mut out, "UP", "BND", &v.name, u);
        }
    }
    out.push_str("ENDATA\n");
    Ok(out)
}

pub fn export_mps(program: &ProgramDescription, path: impl AsRef<Path>) -> Result<(), SolveError> {
    std::fs::write(path, write_mps(program)?)?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    ObjSense,
    Rows,
    Columns,
    Rhs,
    Bounds,
}

/// Parses MPS text produced by [`write_mps`] (or any free/fixed MPS without
/// RANGES) into a canonical program.
pub fn read_mps(text: &str) -> Result<ProgramDescription, SolveError> {
    let mut section = Section::None;
    let mut sense = Sense::Minimize;
    let mut objective_row: Option<String> = None;
    let mut rows: Vec<Constraint> = Vec::new();
    let mut row_index: HashMap<String, usize> = HashMap::new();
    let mut variables: Vec<Variable> = Vec::new();
    let mut var_index: HashMap<String, usize> = HashMap::new();
    let mut objective: Vec<(usize, f64)> = Vec::new();
    let mut constant = 0.0;
    let mut integer = false;

    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let err = |message: String| SolveError::MpsParse { line, message };
        if raw.trim().is_empty() || raw.starts_with('*') {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if !raw.starts_with(char::is_whitespace) {
            section = match fields[0] {
                "NAME" => Section::None,
                "OBJSENSE" => {
                    if let Some(s) = fields.get(1) {
                        sense = if s.starts_with("MAX") { Sense::Maximize } else { Sense::Minimize };
                    }
                    Section::ObjSense
                }
                "ROWS" => Section::Rows,
                "COLUMNS" => Section::Columns,
                "RHS" => Section::Rhs,
                "BOUNDS" => Section::Bounds,
                "ENDATA" => break,
                other => return Err(err(format!("unsupported section {other}"))),
            };
            continue;
        }
        let number = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}")));
        match section {
            Section::ObjSense => {
                sense = if fields[0].starts_with("MAX") { Sense::Maximize } else { Sense::Minimize };
            }
            Section::Rows => {
                let [kind, name] = fields[..] else {
                    return Err(err("ROWS entry needs a type and a name".into()));
                };
                let relation = match kind {
                    "N" => {
                        if objective_row.is_none() {
                            objective_row = Some(name.to_string());
                        }
                        continue;
                    }
                    "L" => Relation::Le,
                    "G" => Relation::Ge,
                    "E" => Relation::Eq,
                    other => return Err(err(format!("unknown row type {other}"))),
                };
                row_index.insert(name.to_string(), rows.len());
                rows.push(Constraint {
                    name: name.to_string(),
                    terms: Vec::new(),
                    relation,
                    rhs: 0.0,
                });
            }
            Section::Columns => {
                if fields.get(1) == Some(&"'MARKER'") {
                    match fields.get(2) {
                        Some(&"'INTORG'") => integer = true,
                        Some(&"'INTEND'") => integer = false,
                        _ => return Err(err("bad MARKER line".into())),
                    }
                    continue;
                }
                if fields.len() != 3 && fields.len() != 5 {
                    return Err(err("COLUMNS entry needs 3 or 5 fields".into()));
                }
                let name = fields[0];
                let j = *var_index.entry(name.to_string()).or_insert_with(|| {
                    variables.push(Variable {
                        name: name.to_string(),
                        lower: 0.0,
                        upper: f64::INFINITY,
                        integer,
                    });
                    variables.len() - 1
                });
                for pair in fields[1..].chunks(2) {
                    let value = number(pair[1])?;
                    if Some(pair[0]) == objective_row.as_deref() {
                        objective.push((j, value));
                    } else {
                        let &i = row_index
                            .get(pair[0])
                            .ok_or_else(|| err(format!("unknown row {}", pair[0])))?;
                        rows[i].terms.push((j, value));
                    }
                }
            }
            Section::Rhs => {
                if fields.len() != 3 && fields.len() != 5 {
                    return Err(err("RHS entry needs 3 or 5 fields".into()));
                }
                for pair in fields[1..].chunks(2) {
                    let value = number(pair[1])?;
                    if Some(pair[0]) == objective_row.as_deref() {
                        constant = -value;
                    } else {
                        let &i = row_index
                            .get(pair[0])
                            .ok_or_else(|| err(format!("unknown row {}", pair[0])))?;
                        rows[i].rhs = value;
                    }
                }
            }
            Section::Bounds => {
                if fields.len() < 3 {
                    return Err(err("BOUNDS entry too short".into()));
                }
                let &j = var_index
                    .get(fields[2])
                    .ok_or_else(|| err(format!("unknown column {}", fields[2])))?;
                let value = fields.get(3).map(|s| number(s)).transpose()?;
                let need = || value.ok_or_else(|| err(format!("{} bound needs a value", fields[0])));
                let v = &mut variables[j];
                match fields[0] {
                    "UP" => v.upper = need()?,
                    "LO" => v.lower = need()?,
                    "FX" => {
                        v.lower = need()?;
                        v.upper = v.lower;
                    }
                    "FR" => {
                        v.lower = f64::NEG_INFINITY;
                        v.upper = f64::INFINITY;
                    }
                    "MI" => v.lower = f64::NEG_INFINITY,
                    "PL" => v.upper = f64::INFINITY,
                    "BV" => {
                        v.lower = 0.0;
                        v.upper = 1.0;
                        v.integer = true;
                    }
                    other => return Err(err(format!("unsupported bound type {other}"))),
                }
            }
            Section::None => return Err(err("data outside of a section".into())),
        }
    }

    for r in &mut rows {
        r.terms = canonical_terms(std::mem::take(&mut r.terms));
    }
    let program = ProgramDescription {
        schema: PROGRAM_SCHEMA.to_string(),
        variables,
        objective: Objective {
            sense,
            terms: canonical_terms(objective),
            constant,
        },
        constraints: rows,
    };
    program.validate()?;
    Ok(program)
}
