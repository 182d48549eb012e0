//! Solver-independent LP/MILP descriptions.
//!
//! A [`ProgramDescription`] is always kept in canonical form: coefficient
//! lists sorted by variable index, duplicates merged and exact zeros dropped.
//! Two builds of the same instance therefore serialize to identical bytes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Schema tag written into every serialized program.
pub const PROGRAM_SCHEMA: &str = "bnwdro-program/1";

#[derive(Debug, Error, PartialEq)]
pub enum ProgramError {
    #[error("constraint {constraint:?} references undeclared variable index {index}")]
    DanglingVariable { constraint: String, index: usize },
    #[error("variable {0:?} has lower bound above upper bound")]
    InvertedBounds(String),
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("unsupported schema tag {0:?}")]
    Schema(String),
    #[error("malformed program JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn lower<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }

    pub fn upper<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    /// `null` in JSON means unbounded below.
    #[serde(serialize_with = "infinite_as_null::serialize", deserialize_with = "infinite_as_null::lower")]
    pub lower: f64,
    /// `null` in JSON means unbounded above.
    #[serde(serialize_with = "infinite_as_null::serialize", deserialize_with = "infinite_as_null::upper")]
    pub upper: f64,
    pub integer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub sense: Sense,
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramDescription {
    pub schema: String,
    pub variables: Vec<Variable>,
    pub objective: Objective,
    pub constraints: Vec<Constraint>,
}

pub(crate) fn canonical_terms(mut terms: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    terms.sort_by_key(|t| t.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
    for (j, c) in terms {
        match out.last_mut() {
            Some(last) if last.0 == j => last.1 += c,
            _ => out.push((j, c)),
        }
    }
    out.retain(|t| t.1 != 0.0);
    out
}

impl ProgramDescription {
    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn has_integers(&self) -> bool {
        self.variables.iter().any(|v| v.integer)
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Variable indices grouped by role, where the role is the part of the
    /// name before the first `[` (`x`, `lambda`, `alpha`, `psi`, ...).
    pub fn roles(&self) -> BTreeMap<String, Vec<usize>> {
        let mut roles: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (j, v) in self.variables.iter().enumerate() {
            let role = v.name.split('[').next().unwrap_or(&v.name);
            roles.entry(role.to_string()).or_default().push(j);
        }
        roles
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        if self.schema != PROGRAM_SCHEMA {
            return Err(ProgramError::Schema(self.schema.clone()));
        }
        let n = self.variables.len();
        for v in &self.variables {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(ProgramError::InvertedBounds(v.name.clone()));
            }
        }
        if !self.objective.constant.is_finite() {
            return Err(ProgramError::NonFinite("objective constant".into()));
        }
        for &(j, c) in &self.objective.terms {
            if j >= n {
                return Err(ProgramError::DanglingVariable {
                    constraint: "objective".into(),
                    index: j,
                });
            }
            if !c.is_finite() {
                return Err(ProgramError::NonFinite("objective".into()));
            }
        }
        for con in &self.constraints {
            for &(j, c) in &con.terms {
                if j >= n {
                    return Err(ProgramError::DanglingVariable {
                        constraint: con.name.clone(),
                        index: j,
                    });
                }
                if !c.is_finite() {
                    return Err(ProgramError::NonFinite(con.name.clone()));
                }
            }
            if !con.rhs.is_finite() {
                return Err(ProgramError::NonFinite(con.name.clone()));
            }
        }
        Ok(())
    }

    /// Objective value of an assignment, in the program's own sense.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.constant + self.objective.terms.iter().map(|&(j, c)| c * x[j]).sum::<f64>()
    }

    /// Largest absolute violation of any row or variable bound.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for (v, &xj) in self.variables.iter().zip(x) {
            worst = worst.max(v.lower - xj).max(xj - v.upper);
        }
        for con in &self.constraints {
            let lhs: f64 = con.terms.iter().map(|&(j, c)| c * x[j]).sum();
            let viol = match con.relation {
                Relation::Le => lhs - con.rhs,
                Relation::Ge => con.rhs - lhs,
                Relation::Eq => (lhs - con.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, ProgramError> {
        let mut p: ProgramDescription =
            serde_json::from_str(text).map_err(|e| ProgramError::Json(e.to_string()))?;
        p.objective.terms = canonical_terms(std::mem::take(&mut p.objective.terms));
        for c in &mut p.constraints {
            c.terms = canonical_terms(std::mem::take(&mut c.terms));
        }
        p.validate()?;
        Ok(p)
    }
}

/// Incremental construction of a [`ProgramDescription`].
#[derive(Debug, Clone)]
pub struct ProgramBuilder {
    variables: Vec<Variable>,
    objective: Vec<(usize, f64)>,
    constant: f64,
    sense: Sense,
    constraints: Vec<Constraint>,
}

impl ProgramBuilder {
    pub fn new(sense: Sense) -> Self {
        Self {
            variables: Vec::new(),
            objective: Vec::new(),
            constant: 0.0,
            sense,
            constraints: Vec::new(),
        }
    }

    pub fn add_variable(&mut self, name: impl Into<String>, lower: f64, upper: f64, integer: bool) -> usize {
        self.variables.push(Variable {
            name: name.into(),
            lower,
            upper,
            integer,
        });
        self.variables.len() - 1
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn add_objective_term(&mut self, var: usize, coef: f64) {
        self.objective.push((var, coef));
    }

    pub fn add_objective_constant(&mut self, c: f64) {
        self.constant += c;
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(usize, f64)>,
        relation: Relation,
        rhs: f64,
    ) {
        self.constraints.push(Constraint {
            name: name.into(),
            terms: canonical_terms(terms),
            relation,
            rhs,
        });
    }

    pub fn build(mut self) -> Result<ProgramDescription, ProgramError> {
        // `-0.0 + 0.0 == +0.0`: keeps the canonical text free of signed zeros
        for c in &mut self.constraints {
            c.rhs += 0.0;
        }
        for v in &mut self.variables {
            v.lower += 0.0;
            v.upper += 0.0;
        }
        let p = ProgramDescription {
            schema: PROGRAM_SCHEMA.to_string(),
            variables: self.variables,
            objective: Objective {
                sense: self.sense,
                terms: canonical_terms(self.objective),
                constant: self.constant + 0.0,
            },
            constraints: self.constraints,
        };
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terms_are_canonicalised() {
        let mut b = ProgramBuilder::new(Sense::Minimize);
        let x = b.add_variable("x[0]", 0.0, 1.0, false);
        let y = b.add_variable("x[1]", f64::NEG_INFINITY, f64::INFINITY, false);
        b.add_constraint("c", vec![(y, 1.0), (x, 2.0), (y, -1.0), (x, 0.5)], Relation::Le, 3.0);
        b.add_objective_term(y, 1.0);
        let p = b.build().unwrap();
        assert_eq!(p.constraints[0].terms, vec![(x, 2.5)]);
    }

    #[test]
    fn json_round_trip_keeps_infinite_bounds() {
        let mut b = ProgramBuilder::new(Sense::Maximize);
        b.add_variable("lambda[0]", 0.0, f64::INFINITY, false);
        b.add_variable("alpha[0]", f64::NEG_INFINITY, f64::INFINITY, false);
        b.add_objective_term(0, -1.5);
        b.add_constraint("r", vec![(0, 1.0), (1, 1.0)], Relation::Ge, 0.25);
        let p = b.build().unwrap();
        let text = p.to_canonical_json();
        assert!(text.contains("null"));
        let back = ProgramDescription::from_json(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_canonical_json(), text);
    }

    #[test]
    fn dangling_reference_rejected() {
        let mut b = ProgramBuilder::new(Sense::Minimize);
        b.add_variable("x", 0.0, 1.0, false);
        b.add_constraint("bad", vec![(3, 1.0)], Relation::Le, 1.0);
        assert!(matches!(b.build(), Err(ProgramError::DanglingVariable { index: 3, .. })));
    }

    #[test]
    fn roles_from_names() {
        let mut b = ProgramBuilder::new(Sense::Minimize);
        b.add_variable("x[0]", 0.0, 1.0, false);
        b.add_variable("lambda[0]", 0.0, 1.0, false);
        b.add_variable("psi[0,1,0]", 0.0, 1.0, false);
        b.add_variable("psi[0,1,1]", 0.0, 1.0, false);
        let roles = b.build().unwrap().roles();
        assert_eq!(roles["psi"], vec![2, 3]);
        assert_eq!(roles["x"], vec![0]);
    }
}
