use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::simplex::{self, Basis, LpStatus, StandardForm};
use super::{BranchingRule, SolveResult, SolveStats, SolverConfig, Status};
use crate::program::ProgramDescription;

struct Node {
    /// Parent LP value in minimisation form.
    bound: f64,
    seq: u64,
    /// `(lower, upper)` per binary variable, in `binaries` order.
    fixings: Vec<(f64, f64)>,
    basis: Option<Basis>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Max-heap: the smallest bound (then the oldest node) is the greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

fn branching_candidate(x: &[f64], binaries: &[usize], rule: BranchingRule, tol: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &j) in binaries.iter().enumerate() {
        let frac = x[j] - x[j].floor();
        if frac <= tol || frac >= 1.0 - tol {
            continue;
        }
        let score = (frac - 0.5).abs();
        match rule {
            BranchingRule::FirstFractional => return Some(k),
            BranchingRule::MostFractional => {
                if best.is_none_or(|(_, s)| score < s) {
                    best = Some((k, score));
                }
            }
        }
    }
    best.map(|b| b.0)
}

pub(super) fn branch_and_bound(program: &ProgramDescription, config: &SolverConfig) -> SolveResult {
    let start = Instant::now();
    let sf = StandardForm::from_program(program);
    let binaries: Vec<usize> = (0..sf.n).filter(|&j| program.variables[j].integer).collect();
    let tol = config.tolerances();
    let mut lower = sf.lower.clone();
    let mut upper = sf.upper.clone();

    let root = binaries
        .iter()
        .map(|&j| (sf.lower[j].max(0.0).ceil(), sf.upper[j].min(1.0).floor()))
        .collect();
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        seq: 0,
        fixings: root,
        basis: None,
    });
    let mut seq = 1;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut nodes = 0;
    let mut iterations = 0;
    let mut status = None;

    while let Some(node) = heap.peek() {
        let cutoff = incumbent.as_ref().map_or(f64::INFINITY, |i| i.0 - config.gap_tol);
        if node.bound >= cutoff {
            break;
        }
        if nodes >= config.node_limit {
            status = Some(Status::NodeLimit);
            break;
        }
        let node = heap.pop().expect("peeked");
        for (&j, &(l, u)) in binaries.iter().zip(&node.fixings) {
            lower[j] = l;
            upper[j] = u;
        }
        let out = simplex::solve(&sf, &lower, &upper, node.basis.as_ref(), &tol, config.iteration_limit);
        nodes += 1;
        iterations += out.iterations;
        match out.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                status = Some(Status::Unbounded);
                break;
            }
            LpStatus::IterationLimit => {
                status = Some(Status::IterationLimit);
                break;
            }
        }
        let x = &out.x[..sf.n];
        let value = sf.constant + sf.cost.iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
        if value >= cutoff {
            continue;
        }
        match branching_candidate(x, &binaries, config.branching, config.integrality_tol) {
            None => incumbent = Some((value, x.to_vec())),
            Some(k) => {
                for (l, u) in [(0.0, 0.0), (1.0, 1.0)] {
                    let mut fixings = node.fixings.clone();
                    fixings[k] = (l, u);
                    heap.push(Node {
                        bound: value,
                        seq,
                        fixings,
                        basis: Some(out.basis.clone()),
                    });
                    seq += 1;
                }
            }
        }
    }

    let sign = if sf.maximize { -1.0 } else { 1.0 };
    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let status = status.unwrap_or(if incumbent.is_some() {
        Status::Optimal
    } else {
        Status::Infeasible
    });
    let bound = match &incumbent {
        Some((v, _)) => Some(sign * v.min(open_bound)),
        None if open_bound.is_finite() => Some(sign * open_bound),
        None => None,
    };
    let (objective, values) = match incumbent {
        Some((_, x)) if matches!(status, Status::Optimal | Status::NodeLimit) => (Some(program.objective_value(&x)), x),
        _ => (None, Vec::new()),
    };
    SolveResult {
        status,
        objective,
        values,
        row_duals: None,
        bound,
        stats: SolveStats {
            iterations,
            nodes,
            seconds: start.elapsed().as_secs_f64(),
        },
    }
}
