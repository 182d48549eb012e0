//! Fixtures and brute-force oracles shared by the integration suites (the
//! CLI acceptance suite pulls this file in with `#[path]`).
#![allow(dead_code)]

use bnwdro::ambiguity::{AmbiguitySet, LocalBall};
use bnwdro::dataset::{Atom, DiscreteDistribution};
use bnwdro::program::{ProgramBuilder, ProgramDescription, Relation, Sense};
use bnwdro::reformulate::Polytope;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    bnwdro::rng::stream_rng(seed, 7)
}

fn round_to(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[p][col].abs() < 1e-10 {
            return None;
        }
        a.swap(p, col);
        b.swap(p, col);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// `min cᵀx` subject to `rows · x ≤ rhs` (bounds included as rows).
#[derive(Debug, Clone)]
pub struct DenseLp {
    pub c: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

impl DenseLp {
    /// Best objective over every basic feasible point: each choice of `n`
    /// rows whose intersection is a single feasible point. `None` if there
    /// is no feasible vertex (the LPs built here are bounded, so that means
    /// infeasible).
    pub fn vertex_optimum(&self) -> Option<f64> {
        let n = self.c.len();
        let m = self.rows.len();
        let mut best: Option<f64> = None;
        let mut pick: Vec<usize> = (0..n).collect();
        loop {
            let a = pick.iter().map(|&i| self.rows[i].clone()).collect();
            let b = pick.iter().map(|&i| self.rhs[i]).collect();
            if let Some(x) = solve_square(a, b) {
                let feasible = self.rows.iter().zip(&self.rhs).all(|(row, &r)| {
                    let lhs: f64 = row.iter().zip(&x).map(|(a, v)| a * v).sum();
                    lhs <= r + 1e-9 * (1.0 + r.abs())
                });
                if feasible {
                    let v: f64 = self.c.iter().zip(&x).map(|(c, v)| c * v).sum();
                    best = Some(best.map_or(v, |b| b.min(v)));
                }
            }
            // next combination in lexicographic order
            let mut k = n;
            loop {
                if k == 0 {
                    return best;
                }
                k -= 1;
                if pick[k] < m - n + k {
                    break;
                }
            }
            pick[k] += 1;
            for j in k + 1..n {
                pick[j] = pick[j - 1] + 1;
            }
        }
    }
}

/// A random bounded LP with `n` variables in `[0, u_j]` and `m` mixed `≤`/`≥`
/// rows, as a program and as the equivalent dense inequality form.
pub fn random_lp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (ProgramDescription, DenseLp) {
    let mut b = ProgramBuilder::new(Sense::Minimize);
    let mut dense = DenseLp {
        c: Vec::new(),
        rows: Vec::new(),
        rhs: Vec::new(),
    };
    for j in 0..n {
        let u = round_to(rng.random_range(1.0..5.0), 0.5);
        let v = b.add_variable(format!("x{j}"), 0.0, u, false);
        let c = round_to(rng.random_range(-1.0..1.0), 0.05);
        b.add_objective_term(v, c);
        dense.c.push(c);
        let mut lo = vec![0.0; n];
        lo[j] = -1.0;
        dense.rows.push(lo);
        dense.rhs.push(0.0);
        let mut hi = vec![0.0; n];
        hi[j] = 1.0;
        dense.rows.push(hi);
        dense.rhs.push(u);
    }
    for i in 0..m {
        // coarse coefficients make degenerate vertices common
        let row: Vec<f64> = (0..n).map(|_| round_to(rng.random_range(-1.0..1.0), 0.25)).collect();
        let ge = rng.random_bool(0.3);
        let rhs = if ge { round_to(rng.random_range(-2.0..0.5), 0.25) } else { round_to(rng.random_range(-0.5..3.0), 0.25) };
        let terms = row.iter().enumerate().filter(|(_, a)| **a != 0.0).map(|(j, &a)| (j, a)).collect();
        if ge {
            b.add_constraint(format!("r{i}"), terms, Relation::Ge, rhs);
            dense.rows.push(row.iter().map(|a| -a).collect());
            dense.rhs.push(-rhs);
        } else {
            b.add_constraint(format!("r{i}"), terms, Relation::Le, rhs);
            dense.rows.push(row);
            dense.rhs.push(rhs);
        }
    }
    (b.build().unwrap(), dense)
}

/// A random pure-binary program with integer data, and its optimum by
/// enumerating all `2^n` assignments (`None` when none is feasible).
pub fn random_binary_program(rng: &mut ChaCha8Rng, n: usize) -> (ProgramDescription, Option<f64>) {
    let mut b = ProgramBuilder::new(if rng.random_bool(0.5) { Sense::Maximize } else { Sense::Minimize });
    let c: Vec<f64> = (0..n).map(|_| rng.random_range(-10..=20) as f64).collect();
    for (j, &cj) in c.iter().enumerate() {
        let v = b.add_variable(format!("b{j}"), 0.0, 1.0, true);
        b.add_objective_term(v, cj);
    }
    let mut rows = Vec::new();
    for i in 0..3 {
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3..=10) as f64).collect();
        let (rel, rhs) = if i == 2 {
            (Relation::Ge, rng.random_range(0..=10) as f64)
        } else {
            (Relation::Le, rng.random_range(5..=25) as f64)
        };
        b.add_constraint(format!("k{i}"), a.iter().copied().enumerate().collect(), rel, rhs);
        rows.push((a, rel, rhs));
    }
    let program = b.build().unwrap();
    let maximize = program.objective.sense == Sense::Maximize;
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << n) {
        let x: Vec<f64> = (0..n).map(|j| ((mask >> j) & 1) as f64).collect();
        let ok = rows.iter().all(|(a, rel, rhs)| {
            let lhs: f64 = a.iter().zip(&x).map(|(a, v)| a * v).sum();
            match rel {
                Relation::Le => lhs <= *rhs,
                Relation::Ge => lhs >= *rhs,
                Relation::Eq => lhs == *rhs,
            }
        });
        if ok {
            let v: f64 = c.iter().zip(&x).map(|(c, v)| c * v).sum();
            best = Some(match best {
                None => v,
                Some(b) if maximize => b.max(v),
                Some(b) => b.min(v),
            });
        }
    }
    (program, best)
}

/// Uniform empirical distribution over `points`.
pub fn uniform(points: &[Vec<f64>]) -> DiscreteDistribution {
    let w = 1.0 / points.len() as f64;
    DiscreteDistribution {
        atoms: points.iter().map(|p| Atom { point: p.clone(), weight: w }).collect(),
    }
}

/// BNWDRO set whose ball weights are the cluster shares of the pooled data.
pub fn ball_set(clusters: &[(Vec<Vec<f64>>, f64)]) -> AmbiguitySet {
    let total: usize = clusters.iter().map(|(p, _)| p.len()).sum();
    AmbiguitySet::Bnwdro {
        balls: clusters
            .iter()
            .map(|(points, radius)| LocalBall {
                center: uniform(points),
                radius: *radius,
                weight: points.len() as f64 / total as f64,
            })
            .collect(),
    }
}

pub fn random_point(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter().zip(hi).map(|(&l, &h)| rng.random_range(l..h)).collect()
}

/// `I ≤ 4` random affine pieces `(a_i, b_i)` in dimension `dim`.
pub fn random_loss(rng: &mut ChaCha8Rng, dim: usize) -> Vec<(Vec<f64>, f64)> {
    let pieces = rng.random_range(1..=4);
    (0..pieces)
        .map(|_| ((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(), rng.random_range(-1.0..1.0)))
        .collect()
}

/// Random 2–3 ball BNWDRO set on the box `[lo, hi]`.
pub fn random_ball_set(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64]) -> AmbiguitySet {
    let k = rng.random_range(2..=3);
    let clusters: Vec<(Vec<Vec<f64>>, f64)> = (0..k)
        .map(|_| {
            let size = rng.random_range(1..=5);
            let points = (0..size).map(|_| random_point(rng, lo, hi)).collect();
            (points, rng.random_range(0.0..0.5))
        })
        .collect();
    ball_set(&clusters)
}

pub fn max_gradient_inf_norm(loss: &[(Vec<f64>, f64)]) -> f64 {
    loss.iter().flat_map(|(a, _)| a.iter().map(|v| v.abs())).fold(0.0, f64::max)
}

/// A bounded worst-case instance for the dual-versus-grid comparison.
#[derive(Debug, Clone)]
pub struct OracleFixture {
    pub name: String,
    pub set: AmbiguitySet,
    pub loss: Vec<(Vec<f64>, f64)>,
    pub support: Polytope,
    pub delta: f64,
}

/// Scalar fixtures on `[a, a + 1 + 2Δ/3]` and planar fixtures on
/// `[0,1]² ∩ {⟨n, w⟩ ≤ s}` with `s` two thirds of a lattice step past a
/// lattice level. Atoms sit on the coarse lattice, so every vertex the
/// worst case can move mass to is off the lattice by a known fraction of
/// `Δ`, which is what makes the gap shrink when `Δ` is halved.
pub fn oracle_fixtures() -> Vec<OracleFixture> {
    let mut out = Vec::new();
    let mut r = rng(2024);
    let d1 = 1e-3;
    for f in 0..12 {
        let a = round_to(r.random_range(-1.0..1.0), d1);
        let hi = a + 1.0 + 2.0 * d1 / 3.0;
        let support = Polytope::interval(a, hi).unwrap();
        let k = if f % 3 == 0 { 1 } else { 2 };
        let clusters: Vec<(Vec<Vec<f64>>, f64)> = (0..k)
            .map(|_| {
                let size = r.random_range(1..=4);
                let pts = (0..size)
                    .map(|_| vec![a + d1 * r.random_range(0..=1000) as f64])
                    .collect();
                (pts, r.random_range(0.05..1.5))
            })
            .collect();
        let mut loss = random_loss(&mut r, 1);
        if f % 2 == 0 {
            // make sure the upper end matters
            loss[0].0[0] = r.random_range(0.5..2.0);
        }
        out.push(OracleFixture {
            name: format!("scalar-{f}"),
            set: ball_set(&clusters),
            loss,
            support,
            delta: d1,
        });
    }
    let d2 = 0.02;
    let facets: [([f64; 2], f64); 4] = [([1.0, 1.0], 1.5), ([1.0, -1.0], 0.6), ([-1.0, -1.0], -0.5), ([-1.0, 1.0], 0.4)];
    for f in 0..10 {
        let (normal, level) = facets[f % facets.len()];
        let s = level + 2.0 * d2 / 3.0;
        let support = Polytope::new(
            2,
            vec![vec![-1.0, 0.0], vec![0.0, -1.0], vec![1.0, 0.0], vec![0.0, 1.0], normal.to_vec()],
            vec![0.0, 0.0, 1.0, 1.0, s],
        )
        .unwrap();
        let k = if f % 4 == 0 { 1 } else { 2 };
        let clusters: Vec<(Vec<Vec<f64>>, f64)> = (0..k)
            .map(|_| {
                let size = r.random_range(1..=3);
                let mut pts = Vec::new();
                while pts.len() < size {
                    let p = vec![d2 * r.random_range(0..=50) as f64, d2 * r.random_range(0..=50) as f64];
                    if support.contains(&p, 1e-12) {
                        pts.push(p);
                    }
                }
                (pts, r.random_range(0.05..1.5))
            })
            .collect();
        let mut loss = random_loss(&mut r, 2);
        // tilt one piece toward the cut facet
        loss[0].0 = normal.iter().map(|v| v * r.random_range(0.5..1.5)).collect();
        out.push(OracleFixture {
            name: format!("planar-{f}"),
            set: ball_set(&clusters),
            loss,
            support,
            delta: d2,
        });
    }
    out
}
