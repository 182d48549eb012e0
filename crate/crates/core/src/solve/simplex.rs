//! Bounded-variable revised primal simplex.
//!
//! Every row gets a slack (`a·x + s = b`) whose bounds encode the relation,
//! so the all-slack basis is always available as a starting point. Phase 1
//! minimises the sum of bound violations of the basic variables (composite
//! objective), which also lets a modified warm-start basis recover
//! feasibility after branching.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::eta::EtaFile;
use crate::program::{ProgramDescription, Relation, Sense};

const NONBASIC: usize = usize::MAX;
const PIVOT_TOL: f64 = 1e-9;
const SINGULAR_TOL: f64 = 1e-9;
const DROP_TOL: f64 = 1e-14;
const REFACTOR_EVERY: usize = 100;
const DEGENERATE_SWITCH: usize = 50;

/// Minimisation form of a [`ProgramDescription`] with sparse columns.
#[derive(Debug, Clone)]
pub(crate) struct StandardForm {
    pub n: usize,
    pub m: usize,
    pub cols: Vec<Vec<(usize, f64)>>,
    pub cost: Vec<f64>,
    pub constant: f64,
    /// Bounds of structurals followed by slacks.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rhs: Vec<f64>,
    pub maximize: bool,
}

impl StandardForm {
    pub fn from_program(p: &ProgramDescription) -> Self {
        let n = p.num_variables();
        let m = p.num_constraints();
        let sign = if p.objective.sense == Sense::Maximize { -1.0 } else { 1.0 };
        let mut cost = vec![0.0; n];
        for &(j, c) in &p.objective.terms {
            cost[j] += sign * c;
        }
        let mut cols = vec![Vec::new(); n];
        let mut lower: Vec<f64> = p.variables.iter().map(|v| v.lower).collect();
        let mut upper: Vec<f64> = p.variables.iter().map(|v| v.upper).collect();
        let mut rhs = Vec::with_capacity(m);
        for (i, con) in p.constraints.iter().enumerate() {
            for &(j, a) in &con.terms {
                cols[j].push((i, a));
            }
            let (lo, hi) = match con.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lower.push(lo);
            upper.push(hi);
            rhs.push(con.rhs);
        }
        Self {
            n,
            m,
            cols,
            cost,
            constant: sign * p.objective.constant,
            lower,
            upper,
            rhs,
            maximize: sign < 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// Basis snapshot used to warm-start a related LP.
#[derive(Debug, Clone)]
pub(crate) struct Basis {
    heading: Vec<usize>,
    x: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LpOutcome {
    pub status: LpStatus,
    /// Values of structurals followed by slacks.
    pub x: Vec<f64>,
    /// Row duals of the minimisation form.
    pub y: Vec<f64>,
    pub iterations: usize,
    pub basis: Basis,
}

pub(crate) struct Tolerances {
    pub primal: f64,
    pub dual: f64,
}

struct Engine<'a> {
    sf: &'a StandardForm,
    lower: &'a [f64],
    upper: &'a [f64],
    x: Vec<f64>,
    heading: Vec<usize>,
    position: Vec<usize>,
    eta: EtaFile,
    base_len: usize,
    base_nnz: usize,
    ptol: f64,
    dtol: f64,
    bland: bool,
    degenerate_run: usize,
    iterations: usize,
    work: Vec<f64>,
}

fn nearest_bound(l: f64, u: f64, v: f64) -> f64 {
    if l.is_finite() && (v <= l || !u.is_finite() || v - l <= u - v) {
        l
    } else if u.is_finite() {
        u
    } else {
        0.0
    }
}

impl<'a> Engine<'a> {
    fn new(sf: &'a StandardForm, lower: &'a [f64], upper: &'a [f64], warm: Option<&Basis>, tol: &Tolerances) -> Self {
        let (n, m) = (sf.n, sf.m);
        let mut x: Vec<f64> = match warm {
            Some(b) => b.x.clone(),
            None => (0..n + m).map(|j| nearest_bound(lower[j], upper[j], 0.0)).collect(),
        };
        let heading: Vec<usize> = match warm {
            Some(b) => b.heading.clone(),
            None => (n..n + m).collect(),
        };
        let mut position = vec![NONBASIC; n + m];
        for (p, &j) in heading.iter().enumerate() {
            position[j] = p;
        }
        for j in 0..n + m {
            if position[j] == NONBASIC && (x[j] < lower[j] || x[j] > upper[j] || !x[j].is_finite()) {
                x[j] = nearest_bound(lower[j], upper[j], x[j]);
            }
        }
        let mut e = Engine {
            sf,
            lower,
            upper,
            x,
            heading,
            position,
            eta: EtaFile::default(),
            base_len: 0,
            base_nnz: 0,
            ptol: tol.primal,
            dtol: tol.dual,
            bland: false,
            degenerate_run: 0,
            iterations: 0,
            work: vec![0.0; m],
        };
        e.reinvert();
        e
    }

    fn cost(&self, j: usize) -> f64 {
        if j < self.sf.n {
            self.sf.cost[j]
        } else {
            0.0
        }
    }

    fn load_column(&self, j: usize, v: &mut [f64]) {
        v.iter_mut().for_each(|a| *a = 0.0);
        if j < self.sf.n {
            for &(i, a) in &self.sf.cols[j] {
                v[i] = a;
            }
        } else {
            v[j - self.sf.n] = 1.0;
        }
    }

    fn column_dot(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.sf.n {
            self.sf.cols[j].iter().map(|&(i, a)| a * y[i]).sum()
        } else {
            y[j - self.sf.n]
        }
    }

    /// Refactors the current basis from scratch. Columns that turn out to be
    /// linearly dependent are swapped for slacks.
    fn reinvert(&mut self) {
        let (n, m) = (self.sf.n, self.sf.m);
        self.eta.clear();
        let mut owner: Vec<usize> = (n..n + m).collect();
        let mut locked = vec![false; m];
        let mut structural = Vec::new();
        for &j in &self.heading {
            if j >= n {
                locked[j - n] = true;
            } else {
                structural.push(j);
            }
        }
        structural.sort_by_key(|&j| (self.sf.cols[j].len(), j));
        // Etas created here pivot on distinct rows, so a column only needs the
        // etas whose pivot rows it touches: visit them in file order through a
        // min-heap keyed by eta index.
        let mut v = std::mem::take(&mut self.work);
        let mut eta_at_row = vec![NONBASIC; m];
        let mut marked = vec![false; m];
        let mut touched: Vec<usize> = Vec::new();
        let mut heap = BinaryHeap::new();
        let mut rejected = Vec::new();
        for &j in &structural {
            for &(i, a) in &self.sf.cols[j] {
                v[i] = a;
                marked[i] = true;
                touched.push(i);
                if eta_at_row[i] != NONBASIC {
                    heap.push(Reverse(eta_at_row[i]));
                }
            }
            while let Some(Reverse(k)) = heap.pop() {
                let (row, pivot, entries) = self.eta.get(k);
                let vr = v[row];
                if vr == 0.0 {
                    continue;
                }
                let t = vr / pivot;
                v[row] = t;
                for &(i, a) in entries {
                    if !marked[i] {
                        marked[i] = true;
                        touched.push(i);
                        if eta_at_row[i] != NONBASIC && eta_at_row[i] > k {
                            heap.push(Reverse(eta_at_row[i]));
                        }
                    }
                    v[i] -= a * t;
                }
            }
            let mut best = None;
            let mut best_abs = SINGULAR_TOL;
            for &r in &touched {
                if !locked[r] && (v[r].abs() > best_abs || (v[r].abs() == best_abs && best.is_some_and(|b| r < b))) {
                    best_abs = v[r].abs();
                    best = Some(r);
                }
            }
            match best {
                Some(r) => {
                    touched.sort_unstable();
                    let entries = touched
                        .iter()
                        .filter(|&&i| i != r && v[i].abs() > DROP_TOL)
                        .map(|&i| (i, v[i]))
                        .collect();
                    eta_at_row[r] = self.eta.len();
                    self.eta.push_entries(r, v[r], entries);
                    owner[r] = j;
                    locked[r] = true;
                }
                None => rejected.push(j),
            }
            for &i in &touched {
                v[i] = 0.0;
                marked[i] = false;
            }
            touched.clear();
        }
        self.work = v;
        for &j in &self.heading {
            self.position[j] = NONBASIC;
        }
        for j in rejected {
            self.x[j] = nearest_bound(self.lower[j], self.upper[j], self.x[j]);
        }
        self.heading = owner;
        for (p, &j) in self.heading.iter().enumerate() {
            self.position[j] = p;
        }
        self.base_len = self.eta.len();
        self.base_nnz = self.eta.nnz();
        self.recompute_basic_values();
    }

    fn recompute_basic_values(&mut self) {
        let (n, m) = (self.sf.n, self.sf.m);
        let mut r = self.sf.rhs.clone();
        for j in 0..n {
            if self.position[j] == NONBASIC && self.x[j] != 0.0 {
                for &(i, a) in &self.sf.cols[j] {
                    r[i] -= a * self.x[j];
                }
            }
        }
        for i in 0..m {
            if self.position[n + i] == NONBASIC {
                r[i] -= self.x[n + i];
            }
        }
        self.eta.ftran(&mut r);
        for (p, &j) in self.heading.iter().enumerate() {
            self.x[j] = r[p];
        }
    }

    fn needs_refactor(&self) -> bool {
        self.eta.len() - self.base_len >= REFACTOR_EVERY || self.eta.nnz() > 3 * self.base_nnz + 10 * self.sf.m
    }

    /// Phase-dependent basic cost vector; returns whether phase 1 is active.
    fn basic_costs(&self, cb: &mut [f64]) -> bool {
        let mut phase1 = false;
        for (p, &j) in self.heading.iter().enumerate() {
            cb[p] = if self.x[j] < self.lower[j] - self.ptol {
                phase1 = true;
                -1.0
            } else if self.x[j] > self.upper[j] + self.ptol {
                phase1 = true;
                1.0
            } else {
                0.0
            };
        }
        if !phase1 {
            for (p, &j) in self.heading.iter().enumerate() {
                cb[p] = self.cost(j);
            }
        }
        phase1
    }

    fn price(&self, y: &[f64], phase1: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.sf.n + self.sf.m {
            if self.position[j] != NONBASIC {
                continue;
            }
            let (l, u) = (self.lower[j], self.upper[j]);
            if l == u {
                continue;
            }
            let c = if phase1 { 0.0 } else { self.cost(j) };
            let d = c - self.column_dot(j, y);
            let xj = self.x[j];
            let dir = if d < -self.dtol && xj < u {
                1.0
            } else if d > self.dtol && xj > l {
                -1.0
            } else {
                continue;
            };
            if self.bland {
                return Some((j, dir));
            }
            if d.abs() > best_score {
                best_score = d.abs();
                best = Some((j, dir));
            }
        }
        best
    }

    /// Harris two-pass ratio test. Returns `(step, leaving position and target)`;
    /// `None` for the leaving part means a bound flip of the entering variable.
    fn ratio_test(&self, q: usize, dir: f64, alpha: &[f64]) -> Option<(f64, Option<(usize, f64)>)> {
        let tol = self.ptol;
        let mut relaxed = f64::INFINITY;
        let mut targets: Vec<(usize, f64, f64)> = Vec::new();
        for (p, &a) in alpha.iter().enumerate() {
            if a.abs() < PIVOT_TOL {
                continue;
            }
            let j = self.heading[p];
            let rate = -dir * a;
            let (xj, l, u) = (self.x[j], self.lower[j], self.upper[j]);
            let target = if rate < 0.0 {
                if xj > u + tol {
                    Some(u)
                } else if xj >= l - tol && l.is_finite() {
                    Some(l)
                } else {
                    None
                }
            } else if xj < l - tol {
                Some(l)
            } else if xj <= u + tol && u.is_finite() {
                Some(u)
            } else {
                None
            };
            if let Some(b) = target {
                let slack = (b - xj) / rate;
                let feasible_target = (rate < 0.0 && b == l) || (rate > 0.0 && b == u);
                let r = if feasible_target { slack + tol / rate.abs() } else { slack };
                relaxed = relaxed.min(r.max(0.0));
                targets.push((p, b, slack.max(0.0)));
            }
        }
        let range = self.upper[q] - self.lower[q];
        let mut choice: Option<(usize, f64, f64)> = None;
        for &(p, b, t) in &targets {
            if t > relaxed {
                continue;
            }
            let better = match choice {
                None => true,
                Some((cp, _, ct)) => {
                    if self.bland {
                        t < ct || (t == ct && self.heading[p] < self.heading[cp])
                    } else {
                        alpha[p].abs() > alpha[cp].abs()
                    }
                }
            };
            if better {
                choice = Some((p, b, t));
            }
        }
        if self.bland {
            // Bland's rule needs the true minimum ratio.
            if let Some(tmin) = targets.iter().map(|t| t.2).reduce(f64::min) {
                choice = targets
                    .iter()
                    .filter(|t| t.2 == tmin)
                    .min_by_key(|t| self.heading[t.0])
                    .copied();
            }
        }
        match choice {
            Some((_, _, t)) if range.is_finite() && range <= t => Some((range, None)),
            Some((p, b, t)) => Some((t, Some((p, b)))),
            None if range.is_finite() => Some((range, None)),
            None => None,
        }
    }

    fn run(&mut self, limit: usize) -> LpStatus {
        let m = self.sf.m;
        let mut y = vec![0.0; m];
        let mut alpha = vec![0.0; m];
        let mut fresh = true;
        let mut stalls = 0;
        loop {
            if self.iterations >= limit {
                return LpStatus::IterationLimit;
            }
            if self.needs_refactor() {
                self.reinvert();
                fresh = true;
            }
            let phase1 = self.basic_costs(&mut y);
            self.eta.btran(&mut y);
            let Some((q, dir)) = self.price(&y, phase1) else {
                if !fresh {
                    self.reinvert();
                    fresh = true;
                    continue;
                }
                return if phase1 { LpStatus::Infeasible } else { LpStatus::Optimal };
            };
            self.load_column(q, &mut alpha);
            self.eta.ftran(&mut alpha);
            let Some((step, leaving)) = self.ratio_test(q, dir, &alpha) else {
                if phase1 || !fresh {
                    stalls += 1;
                    if stalls > 3 {
                        return LpStatus::Unbounded;
                    }
                    self.reinvert();
                    fresh = true;
                    continue;
                }
                return LpStatus::Unbounded;
            };
            fresh = false;
            self.iterations += 1;
            if step <= 1e-12 {
                self.degenerate_run += 1;
                if self.degenerate_run > DEGENERATE_SWITCH {
                    self.bland = true;
                }
            } else {
                self.degenerate_run = 0;
                self.bland = false;
            }
            self.x[q] += dir * step;
            for (p, &a) in alpha.iter().enumerate() {
                if a != 0.0 {
                    let j = self.heading[p];
                    self.x[j] -= dir * a * step;
                }
            }
            match leaving {
                None => {
                    self.x[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
                }
                Some((p, bound)) => {
                    let j = self.heading[p];
                    self.x[j] = bound;
                    self.position[j] = NONBASIC;
                    self.heading[p] = q;
                    self.position[q] = p;
                    self.eta.push(p, &alpha);
                }
            }
        }
    }

    fn duals(&self) -> Vec<f64> {
        let mut y: Vec<f64> = self.heading.iter().map(|&j| self.cost(j)).collect();
        self.eta.btran(&mut y);
        y
    }
}

pub(crate) fn solve(
    sf: &StandardForm,
    lower: &[f64],
    upper: &[f64],
    warm: Option<&Basis>,
    tol: &Tolerances,
    limit: usize,
) -> LpOutcome {
    if (0..sf.n + sf.m).any(|j| lower[j] > upper[j]) {
        return LpOutcome {
            status: LpStatus::Infeasible,
            x: vec![0.0; sf.n + sf.m],
            y: vec![0.0; sf.m],
            iterations: 0,
            basis: Basis {
                heading: (sf.n..sf.n + sf.m).collect(),
                x: vec![0.0; sf.n + sf.m],
            },
        };
    }
    let mut engine = Engine::new(sf, lower, upper, warm, tol);
    let status = engine.run(limit);
    let y = engine.duals();
    LpOutcome {
        status,
        y,
        iterations: engine.iterations,
        basis: Basis {
            heading: engine.heading.clone(),
            x: engine.x.clone(),
        },
        x: engine.x,
    }
}
