//! Brute-force verification: worst-case expectations on a discretised
//! support, Monte Carlo evaluation, reliability experiments and the
//! containment (sandwich) check between BNWDRO and WDRO values.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ambiguity::{sandwich_radii, AmbiguityError, AmbiguitySet, GroundNorm};
use crate::dataset::{sample_mixture, Atom, DatasetError, DiscreteDistribution, MixtureSpec};
use crate::pipeline::{solve_method, DroProblem, Method, PipelineOptions};
use crate::program::{ProgramBuilder, Relation, Sense};
use crate::reformulate::{fixed_decision_program, max_affine, mdro_moments, PiecewiseAffineLoss, Polytope, ReformulateError};
use crate::rng::stream_rng;
use crate::solve::{solve_lp, SolveError, SolverConfig, Status};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("cannot discretise an unbounded support")]
    UnboundedSupport,
    #[error("no lattice node of spacing {0} lies in the support")]
    EmptyGrid(f64),
    #[error("resolution must be positive, got {0}")]
    BadResolution(f64),
    #[error(transparent)]
    Reformulate(#[from] ReformulateError),
    #[error(transparent)]
    Ambiguity(#[from] AmbiguityError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("oracle LP finished with status {0:?}")]
    NotOptimal(Status),
    #[error("sandwich violated for losses {0:?}")]
    SandwichViolation(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportGrid {
    pub nodes: Vec<Vec<f64>>,
    pub resolution: f64,
}

/// Lattice of spacing `resolution` anchored at the lower corner of the
/// support's bounding box, filtered to the support, plus every point of
/// `extra` that lies in the support and is not already a node.
pub fn discretize_support(support: &Polytope, resolution: f64, extra: &[&[f64]]) -> Result<SupportGrid, OracleError> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(OracleError::BadResolution(resolution));
    }
    if !support.is_bounded() {
        return Err(OracleError::UnboundedSupport);
    }
    let axes: Vec<Vec<f64>> = support
        .bounding_box()
        .iter()
        .map(|&(lo, hi)| {
            let count = ((hi - lo) / resolution + 1e-9).floor() as usize + 1;
            (0..count).map(|k| lo + k as f64 * resolution).collect()
        })
        .collect();
    let mut nodes = Vec::new();
    let mut index = vec![0usize; axes.len()];
    'outer: loop {
        let w: Vec<f64> = index.iter().zip(&axes).map(|(&k, axis)| axis[k]).collect();
        if support.contains(&w, 1e-9) {
            nodes.push(w);
        }
        for (k, axis) in index.iter_mut().zip(&axes) {
            *k += 1;
            if *k < axis.len() {
                continue 'outer;
            }
            *k = 0;
        }
        break;
    }
    if nodes.is_empty() {
        return Err(OracleError::EmptyGrid(resolution));
    }
    let key = |w: &[f64]| w.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let mut seen: HashSet<Vec<u64>> = nodes.iter().map(|w| key(w)).collect();
    for &p in extra {
        if support.contains(p, 1e-9) && seen.insert(key(p)) {
            nodes.push(p.to_vec());
        }
    }
    Ok(SupportGrid { nodes, resolution })
}

fn distance(a: &[f64], b: &[f64], norm: GroundNorm) -> f64 {
    let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
    match norm {
        GroundNorm::L1 => diffs.sum(),
        GroundNorm::Linf => diffs.fold(0.0, f64::max),
    }
}

/// Worst-case expectation of `max_i ⟨a_i, w⟩ + b_i` over the ambiguity set,
/// restricted to distributions supported on the grid.
///
/// Wasserstein sets: one conditional distribution per atom, with a transport
/// budget per ball. Moment sets: node probabilities with the mean held within
/// `±resolution` of the sample mean and the per-coordinate second central
/// moments capped.
pub fn worst_case_oracle(
    set: &AmbiguitySet,
    loss_at_x: &[(Vec<f64>, f64)],
    grid: &SupportGrid,
    norm: GroundNorm,
) -> Result<f64, OracleError> {
    let values: Vec<f64> = grid.nodes.iter().map(|w| max_affine(loss_at_x, w)).collect();
    let mut b = ProgramBuilder::new(Sense::Maximize);
    match set.balls() {
        Some(balls) => {
            for (k, ball) in balls.iter().enumerate() {
                let share = ball.weight / ball.center.len() as f64;
                let mut budget = Vec::new();
                for atom in &ball.center.atoms {
                    let l = b.num_variables() / grid.nodes.len().max(1);
                    let first = b.num_variables();
                    for (j, w) in grid.nodes.iter().enumerate() {
                        let q = b.add_variable(format!("q[{l},{j}]"), 0.0, f64::INFINITY, false);
                        b.add_objective_term(q, share * values[j]);
                        let cost = distance(w, &atom.point, norm);
                        budget.push((q, cost / ball.center.len() as f64));
                    }
                    let ones = (first..b.num_variables()).map(|q| (q, 1.0)).collect();
                    b.add_constraint(format!("mass[{l}]"), ones, Relation::Eq, 1.0);
                }
                b.add_constraint(format!("budget[{k}]"), budget, Relation::Le, ball.radius);
            }
        }
        None => {
            let (mean, var) = mdro_moments(set)?;
            let p: Vec<usize> = (0..grid.nodes.len())
                .map(|j| {
                    let v = b.add_variable(format!("p[{j}]"), 0.0, f64::INFINITY, false);
                    b.add_objective_term(v, values[j]);
                    v
                })
                .collect();
            b.add_constraint("mass", p.iter().map(|&v| (v, 1.0)).collect(), Relation::Eq, 1.0);
            for c in 0..mean.len() {
                let first: Vec<(usize, f64)> = p.iter().zip(&grid.nodes).map(|(&v, w)| (v, w[c])).collect();
                b.add_constraint(format!("mean_hi[{c}]"), first.clone(), Relation::Le, mean[c] + grid.resolution);
                b.add_constraint(format!("mean_lo[{c}]"), first, Relation::Ge, mean[c] - grid.resolution);
                let second = p.iter().zip(&grid.nodes).map(|(&v, w)| (v, (w[c] - mean[c]).powi(2))).collect();
                b.add_constraint(format!("moment[{c}]"), second, Relation::Le, var[c]);
            }
        }
    }
    let program = b.build().map_err(ReformulateError::from)?;
    let result = solve_lp(&program, &SolverConfig::default())?;
    match result.status {
        Status::Optimal => Ok(result.objective.expect("optimal")),
        s => Err(OracleError::NotOptimal(s)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Mean loss of decision `x` over `n` i.i.d. draws from `sampler`.
pub fn monte_carlo_cost(
    x: &[f64],
    loss: &PiecewiseAffineLoss,
    sampler: &MixtureSpec,
    n: usize,
    seed: u64,
) -> Result<MonteCarloEstimate, OracleError> {
    let draw = sampler.sampler()?;
    let pieces = loss.at(x);
    let mut rng = stream_rng(seed, 1);
    let mut w = vec![0.0; draw.dim()];
    // Welford accumulation
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 1..=n {
        draw.draw_into(&mut rng, &mut w);
        let v = max_affine(&pieces, &w);
        let delta = v - mean;
        mean += delta / k as f64;
        m2 += delta * (v - mean);
    }
    let std_error = if n > 1 { (m2 / (n - 1) as f64 / n as f64).sqrt() } else { 0.0 };
    Ok(MonteCarloEstimate { mean, std_error })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityConfig {
    pub trials: usize,
    pub n: usize,
    pub sampler: MixtureSpec,
    pub method: Method,
    pub seed: u64,
    /// Monte Carlo sample size for the true cost of each decision.
    pub mc_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub certificate: f64,
    pub true_cost: f64,
    pub covered: bool,
    pub decision: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub trials: usize,
    pub coverage: f64,
    pub records: Vec<TrialRecord>,
}

/// One data draw, fit and evaluation. Trial `t` uses seed `seed + t` for its
/// data, clustering and Monte Carlo streams.
pub fn run_trial(
    problem: &DroProblem,
    config: &ReliabilityConfig,
    options: &PipelineOptions,
    trial: usize,
) -> TrialRecord {
    let seed = config.seed.wrapping_add(trial as u64);
    let attempt = || -> Result<(Vec<f64>, f64, f64), String> {
        let data = sample_mixture(&config.sampler, config.n, seed).map_err(|e| e.to_string())?;
        let mut opts = options.clone();
        opts.dpmm.seed = seed;
        let sol = solve_method(problem, config.method, &data, &opts).map_err(|e| e.to_string())?;
        let mc = monte_carlo_cost(&sol.decision, &problem.loss, &config.sampler, config.mc_samples, seed)
            .map_err(|e| e.to_string())?;
        let true_cost = problem.decision.cost_of(&sol.decision) + mc.mean;
        Ok((sol.decision, sol.certificate, true_cost))
    };
    match attempt() {
        Ok((decision, certificate, true_cost)) => TrialRecord {
            trial,
            certificate,
            true_cost,
            covered: true_cost <= certificate,
            decision,
            error: None,
        },
        Err(e) => TrialRecord {
            trial,
            certificate: f64::NAN,
            true_cost: f64::NAN,
            covered: false,
            decision: Vec::new(),
            error: Some(e),
        },
    }
}

/// Repeats [`run_trial`] and reports the fraction of trials whose certificate
/// bounds the true cost. Trials run in parallel; records are in trial order.
pub fn reliability_experiment(problem: &DroProblem, config: &ReliabilityConfig, options: &PipelineOptions) -> ReliabilityReport {
    let records: Vec<TrialRecord> = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(problem, config, options, t))
        .collect();
    let covered = records.iter().filter(|r| r.covered).count();
    ReliabilityReport {
        trials: config.trials,
        coverage: if config.trials == 0 { 0.0 } else { covered as f64 / config.trials as f64 },
        records,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichRow {
    pub loss: usize,
    pub v_low: f64,
    pub v_mid: f64,
    pub v_high: f64,
}

impl SandwichRow {
    pub fn holds(&self, tol: f64) -> bool {
        self.v_low <= self.v_mid + tol && self.v_mid <= self.v_high + tol
    }
}

/// The pooled empirical distribution of a BNWDRO set's ball centres.
pub fn pooled_center(set: &AmbiguitySet) -> Result<DiscreteDistribution, OracleError> {
    let AmbiguitySet::Bnwdro { balls } = set else {
        return Err(AmbiguityError::WrongVariant.into());
    };
    let atoms = balls
        .iter()
        .flat_map(|b| {
            let share = b.weight / b.center.len() as f64;
            b.center.atoms.iter().map(move |a| Atom {
                point: a.point.clone(),
                weight: share,
            })
        })
        .collect();
    Ok(DiscreteDistribution { atoms })
}

fn dual_value(set: &AmbiguitySet, loss: &[(Vec<f64>, f64)], support: &Polytope, norm: GroundNorm) -> Result<f64, OracleError> {
    let program = fixed_decision_program(set, loss, support, norm)?;
    let r = solve_lp(&program, &SolverConfig::default())?;
    match r.status {
        Status::Optimal => Ok(r.objective.expect("optimal")),
        s => Err(OracleError::NotOptimal(s)),
    }
}

/// Worst-case values over `W(θ̲)`, the BNWDRO set and `W(θ̄)` for each loss.
pub fn sandwich_values(
    set: &AmbiguitySet,
    losses: &[Vec<(Vec<f64>, f64)>],
    support: &Polytope,
    norm: GroundNorm,
) -> Result<Vec<SandwichRow>, OracleError> {
    let radii = sandwich_radii(set)?;
    let center = pooled_center(set)?;
    let low = AmbiguitySet::Wdro {
        center: center.clone(),
        radius: radii.theta_lower,
    };
    let high = AmbiguitySet::Wdro {
        center,
        radius: radii.theta_upper,
    };
    losses
        .iter()
        .enumerate()
        .map(|(i, loss)| {
            Ok(SandwichRow {
                loss: i,
                v_low: dual_value(&low, loss, support, norm)?,
                v_mid: dual_value(set, loss, support, norm)?,
                v_high: dual_value(&high, loss, support, norm)?,
            })
        })
        .collect()
}

/// Fails with the indices of every loss whose values break
/// `v_low ≤ v_mid ≤ v_high` by more than `1e-7`.
pub fn sandwich_check(
    set: &AmbiguitySet,
    losses: &[Vec<(Vec<f64>, f64)>],
    support: &Polytope,
    norm: GroundNorm,
) -> Result<Vec<SandwichRow>, OracleError> {
    let rows = sandwich_values(set, losses, support, norm)?;
    let bad: Vec<usize> = rows.iter().filter(|r| !r.holds(1e-7)).map(|r| r.loss).collect();
    if bad.is_empty() {
        Ok(rows)
    } else {
        Err(OracleError::SandwichViolation(bad))
    }
}
