//! End-to-end data → ambiguity set → program → decision, for each method.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ambiguity::{build_bnwdro, build_mdro, build_wdro, AmbiguityError, AmbiguitySet, GroundNorm};
use crate::dataset::{empirical, Dataset};
use crate::dpmm::{cluster, DpmmConfig, DpmmError};
use crate::oracle::{discretize_support, OracleError};
use crate::program::{ProgramDescription, Relation};
use crate::reformulate::{
    dual_program, mdro_program, saa_program, DecisionModel, PiecewiseAffineLoss, Polytope, ReformulateError,
};
use crate::solve::{solve, SolveError, SolveResult, SolverConfig, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bnwdro,
    Wdro,
    Mdro,
    Saa,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Bnwdro, Method::Wdro, Method::Mdro, Method::Saa];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bnwdro => "bnwdro",
            Method::Wdro => "wdro",
            Method::Mdro => "mdro",
            Method::Saa => "saa",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown method {s:?} (expected bnwdro, wdro, mdro or saa)"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dpmm(#[from] DpmmError),
    #[error(transparent)]
    Ambiguity(#[from] AmbiguityError),
    #[error(transparent)]
    Reformulate(#[from] ReformulateError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("solver finished with status {0:?}")]
    NotOptimal(Status),
}

/// The problem data shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroProblem {
    pub loss: PiecewiseAffineLoss,
    pub support: Polytope,
    pub decision: DecisionModel,
    pub norm: GroundNorm,
    /// Grid spacing used by the moment-set baseline.
    pub mdro_resolution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub beta: f64,
    pub dpmm: DpmmConfig,
    pub solver: SolverConfig,
    /// Overrides every calibrated Wasserstein radius.
    pub forced_radius: Option<f64>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            beta: 0.95,
            dpmm: DpmmConfig::default(),
            solver: SolverConfig::default(),
            forced_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSolution {
    pub method: Method,
    /// Values of the decision block.
    pub decision: Vec<f64>,
    /// Optimal value of the method's program.
    pub certificate: f64,
    /// Number of balls (1 for WDRO, 0 for SAA and MDRO).
    pub clusters: usize,
    pub radii: Vec<f64>,
    pub status: Status,
    pub iterations: usize,
    pub nodes: usize,
}

/// The ambiguity set a method uses on `dataset` (`None` for SAA).
pub fn build_set(method: Method, dataset: &Dataset, options: &PipelineOptions) -> Result<Option<AmbiguitySet>, PipelineError> {
    let set = match method {
        Method::Saa => return Ok(None),
        Method::Mdro => build_mdro(dataset),
        Method::Wdro => build_wdro(dataset, options.beta)?,
        Method::Bnwdro => {
            let (_, clustering) = cluster(dataset, &options.dpmm)?;
            build_bnwdro(dataset, &clustering, options.beta)?
        }
    };
    Ok(Some(match options.forced_radius {
        Some(r) => set.with_radius(r),
        None => set,
    }))
}

/// The program a method solves on `dataset`, together with its set.
pub fn method_program(
    problem: &DroProblem,
    method: Method,
    dataset: &Dataset,
    options: &PipelineOptions,
) -> Result<(ProgramDescription, Option<AmbiguitySet>), PipelineError> {
    let set = build_set(method, dataset, options)?;
    let program = match (&set, method) {
        (None, _) => saa_program(&empirical(dataset), &problem.loss, &problem.decision)?,
        (Some(s), Method::Mdro) => {
            let grid = discretize_support(&problem.support, problem.mdro_resolution, &dataset.rows().collect::<Vec<_>>())?;
            mdro_program(s, &problem.loss, &grid.nodes, problem.mdro_resolution, &problem.decision)?
        }
        (Some(s), _) => dual_program(s, &problem.loss, &problem.support, &problem.decision, problem.norm)?,
    };
    Ok((program, set))
}

fn finish(method: Method, set: Option<&AmbiguitySet>, n: usize, result: SolveResult) -> Result<MethodSolution, PipelineError> {
    if result.status != Status::Optimal {
        return Err(PipelineError::NotOptimal(result.status));
    }
    let radii: Vec<f64> = set.and_then(AmbiguitySet::balls).map(|b| b.iter().map(|b| b.radius).collect()).unwrap_or_default();
    Ok(MethodSolution {
        method,
        decision: result.values[..n].to_vec(),
        certificate: result.objective.expect("optimal"),
        clusters: match method {
            Method::Bnwdro | Method::Wdro => radii.len(),
            _ => 0,
        },
        radii,
        status: result.status,
        iterations: result.stats.iterations,
        nodes: result.stats.nodes,
    })
}

/// Runs one method end to end and returns its decision and certificate.
pub fn solve_method(
    problem: &DroProblem,
    method: Method,
    dataset: &Dataset,
    options: &PipelineOptions,
) -> Result<MethodSolution, PipelineError> {
    let (program, set) = method_program(problem, method, dataset, options)?;
    let result = solve(&program, &options.solver)?;
    finish(method, set.as_ref(), problem.decision.n(), result)
}

/// Sample-average value and a subgradient in `x` of `(1/N) Σ_l g(x, w_l)`.
fn sample_average(loss: &PiecewiseAffineLoss, dataset: &Dataset, x: &[f64]) -> (f64, Vec<f64>) {
    let at = loss.at(x);
    let mut value = 0.0;
    let mut grad = vec![0.0; x.len()];
    for w in dataset.rows() {
        let (best, v) = at
            .iter()
            .map(|(a, b)| b + a.iter().zip(w).map(|(u, v)| u * v).sum::<f64>())
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        value += v;
        let piece = &loss.pieces[best];
        for (j, g) in grad.iter_mut().enumerate() {
            *g += piece.q[j] + piece.a.iter().zip(w).map(|(row, wv)| row[j] * wv).sum::<f64>();
        }
    }
    let n = dataset.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (value / n, grad)
}

/// SAA solved by outer approximation: a master over the decision model plus
/// an epigraph variable `theta`, refined with one aggregated subgradient cut
/// per round until the bound gap closes. Same optimum as the one-row-per-sample
/// program, but each round costs one pass over the data, so it scales to very
/// large samples (and to mixed-integer decision models).
pub fn solve_saa_cutting_plane(
    problem: &DroProblem,
    dataset: &Dataset,
    solver: &SolverConfig,
) -> Result<MethodSolution, PipelineError> {
    const MAX_ROUNDS: usize = 1000;
    const REL_GAP: f64 = 1e-9;
    let n = problem.decision.n();
    if problem.loss.decision_dim() != n {
        return Err(ReformulateError::BadDecision("loss and decision model differ in dimension".into()).into());
    }
    let mut master = problem.decision.clone();
    let start = solve(&master.program()?, solver)?;
    if start.status != Status::Optimal {
        return Err(PipelineError::NotOptimal(start.status));
    }
    let theta = master.add_variable("theta", f64::NEG_INFINITY, f64::INFINITY, false, 1.0);
    let (mut iterations, mut nodes) = (start.stats.iterations, start.stats.nodes);
    let mut x = start.values[..n].to_vec();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut status = Status::IterationLimit;
    for round in 0..MAX_ROUNDS {
        let (q, g) = sample_average(&problem.loss, dataset, &x);
        let upper = problem.decision.cost_of(&x) + q;
        if best.as_ref().is_none_or(|b| upper < b.0) {
            best = Some((upper, x.clone()));
        }
        // theta ≥ q + ⟨g, x' − x⟩
        let mut terms: Vec<(usize, f64)> = g.iter().enumerate().map(|(j, &v)| (j, -v)).collect();
        terms.push((theta, 1.0));
        let rhs = q - g.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        master.add_constraint(format!("cut[{round}]"), terms, Relation::Ge, rhs);
        let r = solve(&master.program()?, solver)?;
        iterations += r.stats.iterations;
        nodes += r.stats.nodes;
        if r.status != Status::Optimal {
            return Err(PipelineError::NotOptimal(r.status));
        }
        let lower = r.objective.expect("optimal");
        let (ub, _) = best.as_ref().expect("set above");
        if ub - lower <= REL_GAP * (1.0 + ub.abs()) {
            status = Status::Optimal;
            break;
        }
        x = r.values[..n].to_vec();
    }
    let (certificate, decision) = best.expect("at least one round");
    Ok(MethodSolution {
        method: Method::Saa,
        decision,
        certificate,
        clusters: 0,
        radii: Vec::new(),
        status,
        iterations,
        nodes,
    })
}
