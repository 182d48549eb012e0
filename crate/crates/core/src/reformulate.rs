//! Finite LP/MILP reformulations of the distributionally robust problems.
//!
//! For a Wasserstein-family set with balls `k` (weight `w_k`, radius `θ_k`,
//! atoms `Γ_k`), a loss `max_i h_i(x, w)` with
//! `h_i(x, w) = ⟨A_i x + c_i, w⟩ + ⟨q_i, x⟩ + r_i` and a support
//! `{w : C w ≤ d}`, the worst-case expectation equals
//!
//! ```text
//! min  Σ_k w_k [ λ_k θ_k + (1/|Γ_k|) Σ_{ŵ ∈ Γ_k} α_ŵ ]
//! s.t. α_ŵ ≥ ⟨a_i(x), ŵ⟩ + ⟨q_i, x⟩ + r_i + ⟨ψ_ŵi, d − C ŵ⟩
//!      ‖Cᵀ ψ_ŵi − a_i(x)‖_* ≤ λ_k,   ψ_ŵi ≥ 0,   λ_k ≥ 0
//! ```
//!
//! which stays linear in `x` because `a_i(x) = A_i x + c_i` is affine.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ambiguity::{AmbiguitySet, GroundNorm};
use crate::dataset::DiscreteDistribution;
use crate::program::{Constraint, ProgramBuilder, ProgramDescription, ProgramError, Relation, Sense};
use crate::solve::{solve_lp, SolverConfig, Status};

const INF: f64 = f64::INFINITY;

#[derive(Debug, Error, PartialEq)]
pub enum ReformulateError {
    #[error("support polytope is empty")]
    EmptySupport,
    #[error("support polytope has inconsistent dimensions: {0}")]
    BadSupport(String),
    #[error("loss is inconsistent: {0}")]
    BadLoss(String),
    #[error("decision model is inconsistent: {0}")]
    BadDecision(String),
    #[error("ambiguity set kind {0} is not supported here")]
    UnsupportedSet(&'static str),
    #[error("moment set with a full covariance matrix is not supported (dimension {0})")]
    UnsupportedMdroDimension(usize),
    #[error(transparent)]
    Program(#[from] ProgramError),
}

/// `{w ∈ R^m : C w ≤ d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    dim: usize,
    c: Vec<Vec<f64>>,
    d: Vec<f64>,
    /// Per-coordinate `(min, max)` over the polytope; infinite entries mark
    /// unbounded directions.
    bounding_box: Vec<(f64, f64)>,
}

impl Polytope {
    /// Validates the data, certifies nonemptiness and computes the bounding
    /// box with one LP per coordinate direction.
    pub fn new(dim: usize, c: Vec<Vec<f64>>, d: Vec<f64>) -> Result<Self, ReformulateError> {
        if dim == 0 {
            return Err(ReformulateError::BadSupport("dimension must be positive".into()));
        }
        if c.len() != d.len() || c.iter().any(|row| row.len() != dim) {
            return Err(ReformulateError::BadSupport(format!(
                "{} rows of C, {} entries of d, dimension {dim}",
                c.len(),
                d.len()
            )));
        }
        if c.iter().flatten().chain(&d).any(|v| !v.is_finite()) {
            return Err(ReformulateError::BadSupport("non-finite entry".into()));
        }
        let mut poly = Self {
            dim,
            c,
            d,
            bounding_box: Vec::new(),
        };
        let config = SolverConfig::default();
        for j in 0..dim {
            let mut range = [0.0; 2];
            for (slot, sense) in [Sense::Minimize, Sense::Maximize].into_iter().enumerate() {
                let mut b = ProgramBuilder::new(sense);
                let w: Vec<usize> = (0..dim).map(|i| b.add_variable(format!("w[{i}]"), -INF, INF, false)).collect();
                b.add_objective_term(w[j], 1.0);
                for (r, (row, &rhs)) in poly.c.iter().zip(&poly.d).enumerate() {
                    b.add_constraint(format!("c[{r}]"), w.iter().zip(row).map(|(&v, &a)| (v, a)).collect(), Relation::Le, rhs);
                }
                let res = solve_lp(&b.build()?, &config).expect("well-formed program");
                range[slot] = match res.status {
                    Status::Optimal => res.objective.expect("optimal"),
                    Status::Unbounded => {
                        if slot == 0 {
                            -INF
                        } else {
                            INF
                        }
                    }
                    _ => return Err(ReformulateError::EmptySupport),
                };
            }
            poly.bounding_box.push((range[0], range[1]));
        }
        Ok(poly)
    }

    /// The box `Π_j [lo_j, hi_j]`.
    pub fn boxed(lo: &[f64], hi: &[f64]) -> Result<Self, ReformulateError> {
        let m = lo.len();
        if hi.len() != m {
            return Err(ReformulateError::BadSupport("box bounds differ in length".into()));
        }
        let mut c = Vec::new();
        let mut d = Vec::new();
        for j in 0..m {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            c.push(e.clone());
            d.push(hi[j]);
            e[j] = -1.0;
            c.push(e);
            d.push(-lo[j]);
        }
        Self::new(m, c, d)
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self, ReformulateError> {
        Self::boxed(&[lo], &[hi])
    }

    /// All of `R^m`.
    pub fn whole_space(dim: usize) -> Result<Self, ReformulateError> {
        Self::new(dim, Vec::new(), Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.d.len()
    }

    pub fn c(&self) -> &[Vec<f64>] {
        &self.c
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn is_bounded(&self) -> bool {
        self.bounding_box.iter().all(|(l, u)| l.is_finite() && u.is_finite())
    }

    pub fn bounding_box(&self) -> &[(f64, f64)] {
        &self.bounding_box
    }

    pub fn contains(&self, w: &[f64], tol: f64) -> bool {
        self.c
            .iter()
            .zip(&self.d)
            .all(|(row, &rhs)| row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() <= rhs + tol)
    }
}

/// One affine piece `h(x, w) = ⟨A x + c, w⟩ + ⟨q, x⟩ + r`; `a` is `m x n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePiece {
    pub a: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub q: Vec<f64>,
    pub r: f64,
}

impl AffinePiece {
    /// A piece without decision dependence: `⟨c, w⟩ + r`.
    pub fn constant(c: Vec<f64>, r: f64) -> Self {
        Self {
            a: c.iter().map(|_| Vec::new()).collect(),
            c,
            q: Vec::new(),
            r,
        }
    }

    /// `(A x + c, ⟨q, x⟩ + r)`.
    pub fn at(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let grad = self
            .a
            .iter()
            .zip(&self.c)
            .map(|(row, c)| c + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
            .collect();
        let offset = self.r + self.q.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
        (grad, offset)
    }
}

/// `g(x, w) = max_i h_i(x, w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseAffineLoss {
    pub pieces: Vec<AffinePiece>,
}

impl PiecewiseAffineLoss {
    pub fn new(pieces: Vec<AffinePiece>) -> Result<Self, ReformulateError> {
        let first = pieces.first().ok_or_else(|| ReformulateError::BadLoss("no pieces".into()))?;
        let (m, n) = (first.c.len(), first.q.len());
        for (i, p) in pieces.iter().enumerate() {
            let ok = p.c.len() == m && p.q.len() == n && p.a.len() == m && p.a.iter().all(|row| row.len() == n);
            let finite = p.r.is_finite() && p.c.iter().chain(&p.q).chain(p.a.iter().flatten()).all(|v| v.is_finite());
            if !ok || !finite {
                return Err(ReformulateError::BadLoss(format!("piece {i} is malformed")));
            }
        }
        if m == 0 {
            return Err(ReformulateError::BadLoss("uncertainty dimension is zero".into()));
        }
        Ok(Self { pieces })
    }

    /// Loss pieces already evaluated at a decision: `(a_i, b_i)` pairs.
    pub fn fixed(pairs: &[(Vec<f64>, f64)]) -> Result<Self, ReformulateError> {
        Self::new(pairs.iter().map(|(a, b)| AffinePiece::constant(a.clone(), *b)).collect())
    }

    pub fn uncertainty_dim(&self) -> usize {
        self.pieces[0].c.len()
    }

    pub fn decision_dim(&self) -> usize {
        self.pieces[0].q.len()
    }

    pub fn at(&self, x: &[f64]) -> Vec<(Vec<f64>, f64)> {
        self.pieces.iter().map(|p| p.at(x)).collect()
    }

    pub fn value(&self, x: &[f64], w: &[f64]) -> f64 {
        self.pieces
            .iter()
            .map(|p| {
                let (g, b) = p.at(x);
                b + g.iter().zip(w).map(|(a, v)| a * v).sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Value of `max_i ⟨a_i, w⟩ + b_i`.
pub fn max_affine(pairs: &[(Vec<f64>, f64)], w: &[f64]) -> f64 {
    pairs
        .iter()
        .map(|(a, b)| b + a.iter().zip(w).map(|(x, y)| x * y).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVariable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub binary: bool,
}

/// The deterministic part of the problem: decision variables, linear cost
/// `⟨cost, x⟩ + constant` and constraints over the decision block.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionModel {
    pub variables: Vec<DecisionVariable>,
    pub cost: Vec<f64>,
    pub constant: f64,
    pub constraints: Vec<Constraint>,
}

impl DecisionModel {
    /// Continuous `x[j] ∈ [lower_j, upper_j]` with zero cost.
    pub fn boxed(lower: &[f64], upper: &[f64]) -> Self {
        Self {
            variables: lower
                .iter()
                .zip(upper)
                .enumerate()
                .map(|(j, (&l, &u))| DecisionVariable {
                    name: format!("x[{j}]"),
                    lower: l,
                    upper: u,
                    binary: false,
                })
                .collect(),
            cost: vec![0.0; lower.len()],
            constant: 0.0,
            constraints: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.variables.len()
    }

    pub fn add_variable(&mut self, name: impl Into<String>, lower: f64, upper: f64, binary: bool, cost: f64) -> usize {
        self.variables.push(DecisionVariable {
            name: name.into(),
            lower,
            upper,
            binary,
        });
        self.cost.push(cost);
        self.variables.len() - 1
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, terms: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint {
            name: name.into(),
            terms,
            relation,
            rhs,
        });
    }

    pub fn cost_of(&self, x: &[f64]) -> f64 {
        self.constant + self.cost.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    fn validate(&self, loss_n: usize) -> Result<(), ReformulateError> {
        let n = self.n();
        let bad = |m: String| Err(ReformulateError::BadDecision(m));
        if self.cost.len() != n {
            return bad(format!("{} costs for {n} variables", self.cost.len()));
        }
        if loss_n != n {
            return bad(format!("loss expects {loss_n} decision variables, model has {n}"));
        }
        for v in &self.variables {
            if v.binary && (v.lower < 0.0 || v.upper > 1.0) {
                return bad(format!("binary variable {} has bounds outside [0, 1]", v.name));
            }
        }
        for c in &self.constraints {
            if c.terms.iter().any(|&(j, _)| j >= n) {
                return bad(format!("constraint {} references a missing variable", c.name));
            }
        }
        Ok(())
    }

    /// Builder seeded with the decision block, its cost and constraints.
    fn builder(&self) -> ProgramBuilder {
        let mut b = ProgramBuilder::new(Sense::Minimize);
        for (v, &c) in self.variables.iter().zip(&self.cost) {
            let j = b.add_variable(v.name.clone(), v.lower, v.upper, v.binary);
            b.add_objective_term(j, c);
        }
        b.add_objective_constant(self.constant);
        for c in &self.constraints {
            b.add_constraint(c.name.clone(), c.terms.clone(), c.relation, c.rhs);
        }
        b
    }

    /// The model alone (zero loss), e.g. for a deterministic baseline.
    pub fn program(&self) -> Result<ProgramDescription, ReformulateError> {
        self.validate(self.n())?;
        Ok(self.builder().build()?)
    }
}

/// Linear terms of `⟨A_i x, w⟩ + ⟨q_i, x⟩` in the decision block, and the
/// constant `⟨c_i, w⟩ + r_i`.
fn piece_at_point(p: &AffinePiece, w: &[f64]) -> (Vec<(usize, f64)>, f64) {
    let n = p.q.len();
    let terms = (0..n)
        .map(|j| (j, p.q[j] + p.a.iter().zip(w).map(|(row, wv)| row[j] * wv).sum::<f64>()))
        .collect();
    (terms, p.r + p.c.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
}

fn check_dims(loss: &PiecewiseAffineLoss, support: &Polytope) -> Result<(), ReformulateError> {
    if loss.uncertainty_dim() != support.dim() {
        return Err(ReformulateError::BadLoss(format!(
            "loss has uncertainty dimension {}, support has {}",
            loss.uncertainty_dim(),
            support.dim()
        )));
    }
    Ok(())
}

/// Exact dual program of the Wasserstein-family problem (a WDRO set is one
/// ball of weight one). Variables are ordered `x`, `lambda[k]`, `alpha[l]`,
/// `psi[l,i,r]` and, for the `ℓ∞` ground norm, `t[l,i,j]`; atoms are
/// numbered ball by ball.
pub fn dual_program(
    set: &AmbiguitySet,
    loss: &PiecewiseAffineLoss,
    support: &Polytope,
    decision: &DecisionModel,
    norm: GroundNorm,
) -> Result<ProgramDescription, ReformulateError> {
    let balls = set.balls().ok_or(ReformulateError::UnsupportedSet(set.kind()))?;
    check_dims(loss, support)?;
    decision.validate(loss.decision_dim())?;
    for ball in &balls {
        if ball.center.dim() != support.dim() {
            return Err(ReformulateError::BadSupport("ball atoms and support differ in dimension".into()));
        }
    }
    let m = support.dim();
    let p = support.num_rows();
    let n = decision.n();
    let mut b = decision.builder();

    let lambda: Vec<usize> = (0..balls.len())
        .map(|k| {
            let j = b.add_variable(format!("lambda[{k}]"), 0.0, INF, false);
            b.add_objective_term(j, balls[k].weight * balls[k].radius);
            j
        })
        .collect();
    // (ball, atom point) in global atom order
    let atoms: Vec<(usize, &[f64])> = balls
        .iter()
        .enumerate()
        .flat_map(|(k, ball)| ball.center.atoms.iter().map(move |a| (k, a.point.as_slice())))
        .collect();
    let alpha: Vec<usize> = atoms
        .iter()
        .enumerate()
        .map(|(l, &(k, _))| {
            let j = b.add_variable(format!("alpha[{l}]"), -INF, INF, false);
            b.add_objective_term(j, balls[k].weight / balls[k].center.len() as f64);
            j
        })
        .collect();
    let pieces = loss.pieces.len();
    let psi_base = b.num_variables();
    for l in 0..atoms.len() {
        for i in 0..pieces {
            for r in 0..p {
                b.add_variable(format!("psi[{l},{i},{r}]"), 0.0, INF, false);
            }
        }
    }
    let psi = |l: usize, i: usize, r: usize| psi_base + (l * pieces + i) * p + r;
    let t_base = b.num_variables();
    if norm == GroundNorm::Linf {
        for l in 0..atoms.len() {
            for i in 0..pieces {
                for j in 0..m {
                    b.add_variable(format!("t[{l},{i},{j}]"), 0.0, INF, false);
                }
            }
        }
    }
    let t = |l: usize, i: usize, j: usize| t_base + (l * pieces + i) * m + j;

    for (l, &(k, w)) in atoms.iter().enumerate() {
        let slack: Vec<f64> = (0..p)
            .map(|r| support.d()[r] - support.c()[r].iter().zip(w).map(|(a, v)| a * v).sum::<f64>())
            .collect();
        for (i, piece) in loss.pieces.iter().enumerate() {
            // α − (A_iᵀŵ + q_i)·x − (d − Cŵ)·ψ ≥ ⟨c_i, ŵ⟩ + r_i
            let (xt, constant) = piece_at_point(piece, w);
            let mut terms = vec![(alpha[l], 1.0)];
            terms.extend(xt.into_iter().map(|(j, a)| (j, -a)));
            terms.extend((0..p).map(|r| (psi(l, i, r), -slack[r])));
            b.add_constraint(format!("epi[{l},{i}]"), terms, Relation::Ge, constant);

            // v_j = (Cᵀψ)_j − (A_i x)_j − c_ij
            for j in 0..m {
                let mut v: Vec<(usize, f64)> = (0..p).map(|r| (psi(l, i, r), support.c()[r][j])).collect();
                v.extend((0..n).map(|x| (x, -piece.a[j][x])));
                let cap = match norm {
                    GroundNorm::L1 => lambda[k],
                    GroundNorm::Linf => t(l, i, j),
                };
                let mut up = v.clone();
                up.push((cap, -1.0));
                b.add_constraint(format!("dnp[{l},{i},{j}]"), up, Relation::Le, piece.c[j]);
                let mut down: Vec<(usize, f64)> = v.into_iter().map(|(x, a)| (x, -a)).collect();
                down.push((cap, -1.0));
                b.add_constraint(format!("dnm[{l},{i},{j}]"), down, Relation::Le, -piece.c[j]);
            }
            if norm == GroundNorm::Linf {
                let mut terms: Vec<(usize, f64)> = (0..m).map(|j| (t(l, i, j), 1.0)).collect();
                terms.push((lambda[k], -1.0));
                b.add_constraint(format!("dnsum[{l},{i}]"), terms, Relation::Le, 0.0);
            }
        }
    }
    Ok(b.build()?)
}

/// Worst-case expectation of a loss already evaluated at a fixed decision.
pub fn fixed_decision_program(
    set: &AmbiguitySet,
    loss_at_x: &[(Vec<f64>, f64)],
    support: &Polytope,
    norm: GroundNorm,
) -> Result<ProgramDescription, ReformulateError> {
    let loss = PiecewiseAffineLoss::fixed(loss_at_x)?;
    dual_program(set, &loss, support, &DecisionModel::default(), norm)
}

/// Sample-average program `min f(x) + Σ_l p_l α_l` with `α_l ≥ h_i(x, ŵ_l)`.
pub fn saa_program(
    data: &DiscreteDistribution,
    loss: &PiecewiseAffineLoss,
    decision: &DecisionModel,
) -> Result<ProgramDescription, ReformulateError> {
    decision.validate(loss.decision_dim())?;
    let mut b = decision.builder();
    for (l, atom) in data.atoms.iter().enumerate() {
        let a = b.add_variable(format!("alpha[{l}]"), -INF, INF, false);
        b.add_objective_term(a, atom.weight);
        for (i, piece) in loss.pieces.iter().enumerate() {
            let (xt, constant) = piece_at_point(piece, &atom.point);
            let mut terms = vec![(a, 1.0)];
            terms.extend(xt.into_iter().map(|(j, v)| (j, -v)));
            b.add_constraint(format!("epi[{l},{i}]"), terms, Relation::Ge, constant);
        }
    }
    Ok(b.build()?)
}

/// Dual of the discretised moment problem
/// `max Σ_j p_j g(x, w_j)` over probabilities on `nodes` with
/// `|E_p w_c − μ̂_c| ≤ band` and `E_p (w_c − μ̂_c)² ≤ Σ̂_cc` per coordinate:
///
/// ```text
/// min f(x) + y0 + Σ_c [u_c (μ̂_c + band) − l_c (μ̂_c − band) + s_c Σ̂_cc]
/// s.t. y0 + Σ_c [(u_c − l_c) w_jc + s_c (w_jc − μ̂_c)²] ≥ h_i(x, w_j)
/// ```
///
/// Only scalar or diagonal second-moment matrices are accepted.
pub fn mdro_program(
    set: &AmbiguitySet,
    loss: &PiecewiseAffineLoss,
    nodes: &[Vec<f64>],
    band: f64,
    decision: &DecisionModel,
) -> Result<ProgramDescription, ReformulateError> {
    let (mean, var) = mdro_moments(set)?;
    let m = mean.len();
    if loss.uncertainty_dim() != m {
        return Err(ReformulateError::BadLoss("loss and moment set differ in dimension".into()));
    }
    decision.validate(loss.decision_dim())?;
    let mut b = decision.builder();
    let y0 = b.add_variable("y0", -INF, INF, false);
    b.add_objective_term(y0, 1.0);
    let mut up = Vec::new();
    let mut down = Vec::new();
    let mut s = Vec::new();
    for c in 0..m {
        up.push(b.add_variable(format!("mu_up[{c}]"), 0.0, INF, false));
        b.add_objective_term(up[c], mean[c] + band);
        down.push(b.add_variable(format!("mu_dn[{c}]"), 0.0, INF, false));
        b.add_objective_term(down[c], -(mean[c] - band));
        s.push(b.add_variable(format!("var[{c}]"), 0.0, INF, false));
        b.add_objective_term(s[c], var[c]);
    }
    for (j, w) in nodes.iter().enumerate() {
        for (i, piece) in loss.pieces.iter().enumerate() {
            let (xt, constant) = piece_at_point(piece, w);
            let mut terms = vec![(y0, 1.0)];
            for c in 0..m {
                terms.push((up[c], w[c]));
                terms.push((down[c], -w[c]));
                terms.push((s[c], (w[c] - mean[c]).powi(2)));
            }
            terms.extend(xt.into_iter().map(|(x, v)| (x, -v)));
            b.add_constraint(format!("node[{j},{i}]"), terms, Relation::Ge, constant);
        }
    }
    Ok(b.build()?)
}

/// Mean and per-coordinate variance of a moment set; rejects non-diagonal
/// second-moment matrices.
pub fn mdro_moments(set: &AmbiguitySet) -> Result<(Vec<f64>, Vec<f64>), ReformulateError> {
    let AmbiguitySet::Mdro { mean, second_moment } = set else {
        return Err(ReformulateError::UnsupportedSet(set.kind()));
    };
    let m = mean.len();
    for (a, row) in second_moment.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            if a != b && v != 0.0 {
                return Err(ReformulateError::UnsupportedMdroDimension(m));
            }
        }
    }
    Ok((mean.clone(), (0..m).map(|c| second_moment[c][c]).collect()))
}
