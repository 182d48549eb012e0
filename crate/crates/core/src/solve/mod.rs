//! Built-in LP and binary MILP solver, plus MPS import/export.

mod bnb;
mod eta;
mod mps;
mod simplex;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::program::{ProgramDescription, ProgramError, Relation, Sense};
pub use mps::{export_mps, read_mps, write_mps};
use simplex::{LpStatus, StandardForm, Tolerances};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("malformed program: {0}")]
    Malformed(#[from] ProgramError),
    #[error("solve_lp called on a program with integer variables")]
    HasIntegers,
    #[error("integer variable {0:?} is not binary")]
    NotBinary(String),
    #[error("MPS I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("MPS parse error at line {line}: {message}")]
    MpsParse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    NodeLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchingRule {
    MostFractional,
    FirstFractional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub gap_tol: f64,
    pub integrality_tol: f64,
    pub iteration_limit: usize,
    pub node_limit: usize,
    pub branching: BranchingRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-7,
            optimality_tol: 1e-7,
            gap_tol: 1e-6,
            integrality_tol: 1e-6,
            iteration_limit: 1_000_000,
            node_limit: 100_000,
            branching: BranchingRule::MostFractional,
        }
    }
}

impl SolverConfig {
    fn tolerances(&self) -> Tolerances {
        Tolerances {
            primal: 0.1 * self.feasibility_tol,
            dual: 0.1 * self.optimality_tol,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub nodes: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: Status,
    /// Objective in the program's own sense; set for `Optimal`, and for
    /// `NodeLimit` when an incumbent exists.
    pub objective: Option<f64>,
    /// Variable values by index (empty when no point is available).
    pub values: Vec<f64>,
    /// Row duals of the minimisation form (`max f` is treated as `min -f`).
    /// Present for optimal LPs.
    pub row_duals: Option<Vec<f64>>,
    /// Best proven bound for MILPs.
    pub bound: Option<f64>,
    pub stats: SolveStats,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub fn assignment(&self, program: &ProgramDescription) -> BTreeMap<String, f64> {
        program
            .variables
            .iter()
            .zip(&self.values)
            .map(|(v, &x)| (v.name.clone(), x))
            .collect()
    }

    pub fn value_of(&self, program: &ProgramDescription, name: &str) -> Option<f64> {
        program.variable_index(name).and_then(|j| self.values.get(j).copied())
    }
}

fn lp_status(s: LpStatus) -> Status {
    match s {
        LpStatus::Optimal => Status::Optimal,
        LpStatus::Infeasible => Status::Infeasible,
        LpStatus::Unbounded => Status::Unbounded,
        LpStatus::IterationLimit => Status::IterationLimit,
    }
}

/// Solves a continuous program with the bounded revised simplex method.
pub fn solve_lp(program: &ProgramDescription, config: &SolverConfig) -> Result<SolveResult, SolveError> {
    program.validate()?;
    if program.has_integers() {
        return Err(SolveError::HasIntegers);
    }
    let start = Instant::now();
    let sf = StandardForm::from_program(program);
    let out = simplex::solve(&sf, &sf.lower, &sf.upper, None, &config.tolerances(), config.iteration_limit);
    let status = lp_status(out.status);
    let optimal = status == Status::Optimal;
    let values = out.x[..sf.n].to_vec();
    Ok(SolveResult {
        status,
        objective: optimal.then(|| program.objective_value(&values)),
        values: if optimal { values } else { Vec::new() },
        row_duals: optimal.then_some(out.y),
        bound: None,
        stats: SolveStats {
            iterations: out.iterations,
            nodes: 0,
            seconds: start.elapsed().as_secs_f64(),
        },
    })
}

/// LP-based branch and bound over binary variables.
pub fn solve_milp(program: &ProgramDescription, config: &SolverConfig) -> Result<SolveResult, SolveError> {
    program.validate()?;
    for v in program.variables.iter().filter(|v| v.integer) {
        if v.lower < 0.0 || v.upper > 1.0 {
            return Err(SolveError::NotBinary(v.name.clone()));
        }
    }
    Ok(bnb::branch_and_bound(program, config))
}

/// Dispatches to [`solve_lp`] or [`solve_milp`].
pub fn solve(program: &ProgramDescription, config: &SolverConfig) -> Result<SolveResult, SolveError> {
    if program.has_integers() {
        solve_milp(program, config)
    } else {
        solve_lp(program, config)
    }
}

/// Outcome of an independent duality audit.
#[derive(Debug, Clone, PartialEq)]
pub struct DualAudit {
    pub primal: f64,
    pub dual: f64,
    pub relative_gap: f64,
}

/// Rebuilds the Lagrangian dual bound from `row_duals` and the original
/// program data, without using any solver state. Fails when the duals have
/// the wrong sign for their rows or leave a reduced cost pointing at an
/// infinite bound.
pub fn audit_duals(program: &ProgramDescription, values: &[f64], row_duals: &[f64], tol: f64) -> Result<DualAudit, String> {
    let sign = if program.objective.sense == Sense::Maximize { -1.0 } else { 1.0 };
    let n = program.num_variables();
    let mut reduced = vec![0.0; n];
    for &(j, c) in &program.objective.terms {
        reduced[j] += sign * c;
    }
    let mut dual = sign * program.objective.constant;
    for (con, &y) in program.constraints.iter().zip(row_duals) {
        let wrong_sign = match con.relation {
            Relation::Le => y > tol,
            Relation::Ge => y < -tol,
            Relation::Eq => false,
        };
        if wrong_sign {
            return Err(format!("row {:?} has dual {y} of the wrong sign", con.name));
        }
        let y = match con.relation {
            Relation::Le => y.min(0.0),
            Relation::Ge => y.max(0.0),
            Relation::Eq => y,
        };
        dual += y * con.rhs;
        for &(j, a) in &con.terms {
            reduced[j] -= y * a;
        }
    }
    for (j, v) in program.variables.iter().enumerate() {
        let d = reduced[j];
        let bound = if d > 0.0 { v.lower } else { v.upper };
        if bound.is_finite() {
            dual += d * bound;
        } else if d.abs() <= tol {
            dual += d * values[j];
        } else {
            return Err(format!("reduced cost {d} of {:?} points at an infinite bound", v.name));
        }
    }
    let primal = sign * program.objective_value(values);
    Ok(DualAudit {
        primal: sign * primal,
        dual: sign * dual,
        relative_gap: (primal - dual).abs() / primal.abs().max(1.0),
    })
}
