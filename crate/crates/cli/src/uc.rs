//! Mini unit commitment with affine reserve dispatch under a scalar wind
//! forecast error.
//!
//! Each unit `i` in period `t` carries a commitment `s`, start-up `u` and
//! shut-down `v` indicator, output `p`, up/down reserves `rup`/`rdn`, a
//! participation factor `part` (its share of the error) and an epigraph
//! variable `f` for its convex generation cost. A realised error `w` is
//! absorbed as `p − part·w`, costing `adjust_cost·part·|w|`, so the loss is
//! `max{D(x)·w, −D(x)·w}` with `D = Σ part·adjust_cost`.

use std::path::Path;

use bnwdro::ambiguity::GroundNorm;
use bnwdro::dataset::MixtureSpec;
use bnwdro::pipeline::DroProblem;
use bnwdro::program::{ProgramDescription, Relation};
use bnwdro::reformulate::{AffinePiece, DecisionModel, PiecewiseAffineLoss, Polytope, ReformulateError};
use bnwdro::solve::{solve_lp, SolveError, SolverConfig, Status};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum UcError {
    #[error("infeasible instance: {0}")]
    InfeasibleInstance(String),
    #[error("cannot read instance: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse instance: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Reformulate(#[from] ReformulateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcUnit {
    pub name: String,
    pub startup_cost: f64,
    pub shutdown_cost: f64,
    pub reserve_up_cost: f64,
    pub reserve_down_cost: f64,
    /// Breakpoints `(power, cost)` of a convex piecewise-linear cost curve
    /// spanning `[p_min, p_max]`.
    pub cost_curve: Vec<[f64; 2]>,
    pub p_min: f64,
    pub p_max: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    /// Ramp allowance in a start-up period.
    pub startup_ramp: f64,
    /// Ramp allowance in a shut-down period.
    pub shutdown_ramp: f64,
    pub min_up: usize,
    pub min_down: usize,
    /// Cost per MW of error absorbed.
    pub adjust_cost: f64,
    pub initial_on: bool,
    pub initial_power: f64,
}

impl UcUnit {
    /// `(slope, intercept)` of each curve segment; `f ≥ slope·p + intercept·s`.
    pub fn segments(&self) -> Vec<(f64, f64)> {
        self.cost_curve
            .windows(2)
            .map(|w| {
                let slope = (w[1][1] - w[0][1]) / (w[1][0] - w[0][0]);
                (slope, w[0][1] - slope * w[0][0])
            })
            .collect()
    }

    /// Generation cost at output `p` (the curve maximum).
    pub fn generation_cost(&self, p: f64) -> f64 {
        self.segments().iter().map(|(a, b)| a * p + b).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcInstance {
    pub units: Vec<UcUnit>,
    pub load: Vec<f64>,
    /// Wind forecast per period.
    pub wind: Vec<f64>,
    /// `[w_lo, w_hi]`: the forecast error always lies here.
    pub error_support: [f64; 2],
    /// True distribution of the forecast error, used to draw data.
    pub error: MixtureSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    S,
    U,
    V,
    P,
    Rup,
    Rdn,
    Part,
    F,
}

impl Var {
    const ALL: [Var; 8] = [Var::S, Var::U, Var::V, Var::P, Var::Rup, Var::Rdn, Var::Part, Var::F];

    fn name(self) -> &'static str {
        match self {
            Var::S => "s",
            Var::U => "u",
            Var::V => "v",
            Var::P => "p",
            Var::Rup => "rup",
            Var::Rdn => "rdn",
            Var::Part => "part",
            Var::F => "f",
        }
    }
}

/// Position of each variable in the decision block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub units: usize,
    pub horizon: usize,
}

impl Layout {
    pub fn index(&self, var: Var, unit: usize, t: usize) -> usize {
        (unit * self.horizon + t) * Var::ALL.len() + var as usize
    }

    pub fn len(&self) -> usize {
        self.units * self.horizon * Var::ALL.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub const TINY: &str = include_str!("../fixtures/uc_tiny.toml");
pub const MINI: &str = include_str!("../fixtures/uc_mini.toml");

impl UcInstance {
    pub fn from_toml(text: &str) -> Result<Self, UcError> {
        let inst: UcInstance = toml::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn load(path: &Path) -> Result<Self, UcError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Two units over three periods.
    pub fn tiny() -> Self {
        Self::from_toml(TINY).expect("bundled instance is valid")
    }

    /// Three units over six periods.
    pub fn mini() -> Self {
        Self::from_toml(MINI).expect("bundled instance is valid")
    }

    pub fn horizon(&self) -> usize {
        self.load.len()
    }

    pub fn layout(&self) -> Layout {
        Layout { units: self.units.len(), horizon: self.horizon() }
    }

    pub fn net_load(&self, t: usize) -> f64 {
        self.load[t] - self.wind[t]
    }

    /// Structural checks, stopping at the first failure.
    pub fn validate(&self) -> Result<(), UcError> {
        let fail = |m: String| Err(UcError::InfeasibleInstance(m));
        let t_len = self.load.len();
        if self.units.is_empty() {
            return fail("no units".into());
        }
        if t_len == 0 || self.wind.len() != t_len {
            return fail(format!("load has {t_len} periods but wind has {}", self.wind.len()));
        }
        for u in &self.units {
            let n = &u.name;
            if !(0.0 <= u.p_min && u.p_min <= u.p_max) {
                return fail(format!("unit {n}: need 0 <= p_min <= p_max"));
            }
            if u.min_up == 0 || u.min_down == 0 {
                return fail(format!("unit {n}: minimum up and down times must be at least 1"));
            }
            let nonneg = [
                u.startup_cost,
                u.shutdown_cost,
                u.reserve_up_cost,
                u.reserve_down_cost,
                u.ramp_up,
                u.ramp_down,
                u.startup_ramp,
                u.shutdown_ramp,
                u.adjust_cost,
            ];
            if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return fail(format!("unit {n}: costs and ramp limits must be finite and nonnegative"));
            }
            let c = &u.cost_curve;
            if c.len() < 2 || c.windows(2).any(|w| w[1][0] <= w[0][0]) {
                return fail(format!("unit {n}: cost curve needs at least two breakpoints with increasing power"));
            }
            if c[0][0] > u.p_min || c[c.len() - 1][0] < u.p_max {
                return fail(format!("unit {n}: cost curve must span [p_min, p_max]"));
            }
            if c.iter().any(|b| b[1] < 0.0) {
                return fail(format!("unit {n}: generation costs must be nonnegative"));
            }
            if u.segments().windows(2).any(|s| s[1].0 < s[0].0 - 1e-12) {
                return fail(format!("unit {n}: cost curve is not convex"));
            }
            let init_ok = if u.initial_on {
                u.p_min <= u.initial_power && u.initial_power <= u.p_max
            } else {
                u.initial_power == 0.0
            };
            if !init_ok {
                return fail(format!("unit {n}: initial power inconsistent with its initial state"));
            }
        }
        let [lo, hi] = self.error_support;
        if !(lo <= hi) {
            return fail("error support is empty".into());
        }
        if self.error.dim() != 1 {
            return fail("error distribution must be scalar".into());
        }
        let capacity: f64 = self.units.iter().map(|u| u.p_max).sum();
        for t in 0..t_len {
            if self.load[t] < 0.0 || self.wind[t] < 0.0 {
                return fail(format!("period {t}: load and wind must be nonnegative"));
            }
            if self.net_load(t) > capacity {
                return fail(format!("period {t}: net load {} exceeds total capacity {capacity}", self.net_load(t)));
            }
            if self.net_load(t) < 0.0 {
                return fail(format!("period {t}: wind forecast exceeds load"));
            }
        }
        Ok(())
    }

    /// The commitment and dispatch model, without the uncertain adjustment cost.
    pub fn decision_model(&self) -> DecisionModel {
        let lay = self.layout();
        let horizon = self.horizon();
        let [w_lo, w_hi] = self.error_support;
        let mut m = DecisionModel::boxed(&[], &[]);
        for (i, unit) in self.units.iter().enumerate() {
            for t in 0..horizon {
                for var in Var::ALL {
                    let (lo, hi, binary, cost) = match var {
                        Var::S => (0.0, 1.0, true, 0.0),
                        Var::U => (0.0, 1.0, true, unit.startup_cost),
                        Var::V => (0.0, 1.0, true, unit.shutdown_cost),
                        Var::P => (0.0, unit.p_max, false, 0.0),
                        Var::Rup => (0.0, unit.p_max, false, unit.reserve_up_cost),
                        Var::Rdn => (0.0, unit.p_max, false, unit.reserve_down_cost),
                        Var::Part => (0.0, 1.0, false, 0.0),
                        Var::F => (0.0, f64::INFINITY, false, 1.0),
                    };
                    let j = m.add_variable(format!("{}[{i},{t}]", var.name()), lo, hi, binary, cost);
                    debug_assert_eq!(j, lay.index(var, i, t));
                }
            }
        }
        let x = |var, i, t| lay.index(var, i, t);
        for (i, unit) in self.units.iter().enumerate() {
            let s0 = if unit.initial_on { 1.0 } else { 0.0 };
            for t in 0..horizon {
                let tag = format!("[{i},{t}]");
                // s_t − s_{t−1} = u_t − v_t
                let mut terms = vec![(x(Var::S, i, t), 1.0), (x(Var::U, i, t), -1.0), (x(Var::V, i, t), 1.0)];
                let mut rhs = 0.0;
                if t == 0 {
                    rhs = s0;
                } else {
                    terms.push((x(Var::S, i, t - 1), -1.0));
                }
                m.add_constraint(format!("transition{tag}"), terms, Relation::Eq, rhs);

                // a unit switched on (off) stays on (off) for the rest of its
                // minimum time, clipped at the horizon:
                // L·(s_t − s_{t−1}) ≤ Σ_{k<t+L} s_k and L·(s_{t−1} − s_t) ≤ Σ (1 − s_k)
                for (name, len, sign) in [("min_up", unit.min_up, 1.0), ("min_down", unit.min_down, -1.0)] {
                    let len = len.min(horizon - t);
                    let l = len as f64;
                    let mut terms: Vec<(usize, f64)> = (t..t + len).map(|k| (x(Var::S, i, k), sign)).collect();
                    terms[0].1 -= sign * l;
                    let mut rhs = if sign > 0.0 { 0.0 } else { -l };
                    if t == 0 {
                        rhs -= sign * l * s0;
                    } else {
                        terms.push((x(Var::S, i, t - 1), sign * l));
                    }
                    m.add_constraint(format!("{name}{tag}"), terms, Relation::Ge, rhs);
                }

                m.add_constraint(
                    format!("cap_lo{tag}"),
                    vec![(x(Var::P, i, t), 1.0), (x(Var::Rdn, i, t), -1.0), (x(Var::S, i, t), -unit.p_min)],
                    Relation::Ge,
                    0.0,
                );
                m.add_constraint(
                    format!("cap_hi{tag}"),
                    vec![(x(Var::P, i, t), 1.0), (x(Var::Rup, i, t), 1.0), (x(Var::S, i, t), -unit.p_max)],
                    Relation::Le,
                    0.0,
                );

                // (p_t + rup_t) − (p_{t−1} − rdn_{t−1})
                //   ≤ (2 − s_{t−1} − s_t)·startup_ramp + (1 + s_{t−1} − s_t)·ramp_up
                let (su, ru) = (unit.startup_ramp, unit.ramp_up);
                let mut terms = vec![(x(Var::P, i, t), 1.0), (x(Var::Rup, i, t), 1.0), (x(Var::S, i, t), su + ru)];
                let mut rhs = 2.0 * su + ru;
                if t == 0 {
                    rhs += unit.initial_power - s0 * (su - ru);
                } else {
                    terms.extend([
                        (x(Var::P, i, t - 1), -1.0),
                        (x(Var::Rdn, i, t - 1), 1.0),
                        (x(Var::S, i, t - 1), su - ru),
                    ]);
                }
                m.add_constraint(format!("ramp_up{tag}"), terms, Relation::Le, rhs);

                // (p_{t−1} + rup_{t−1}) − (p_t − rdn_t)
                //   ≤ (2 − s_{t−1} − s_t)·shutdown_ramp + (1 − s_{t−1} + s_t)·ramp_down
                let (sd, rd) = (unit.shutdown_ramp, unit.ramp_down);
                let mut terms = vec![(x(Var::P, i, t), -1.0), (x(Var::Rdn, i, t), 1.0), (x(Var::S, i, t), sd - rd)];
                let mut rhs = 2.0 * sd + rd;
                if t == 0 {
                    rhs -= unit.initial_power + s0 * (sd + rd);
                } else {
                    terms.extend([
                        (x(Var::P, i, t - 1), 1.0),
                        (x(Var::Rup, i, t - 1), 1.0),
                        (x(Var::S, i, t - 1), sd + rd),
                    ]);
                }
                m.add_constraint(format!("ramp_down{tag}"), terms, Relation::Le, rhs);

                for (k, (slope, intercept)) in unit.segments().into_iter().enumerate() {
                    m.add_constraint(
                        format!("cost[{i},{t},{k}]"),
                        vec![(x(Var::F, i, t), 1.0), (x(Var::P, i, t), -slope), (x(Var::S, i, t), -intercept)],
                        Relation::Ge,
                        0.0,
                    );
                }

                // the unit can absorb its share of any error in the support
                m.add_constraint(
                    format!("reserve_down{tag}"),
                    vec![(x(Var::Rdn, i, t), 1.0), (x(Var::Part, i, t), -w_hi)],
                    Relation::Ge,
                    0.0,
                );
                m.add_constraint(
                    format!("reserve_up{tag}"),
                    vec![(x(Var::Rup, i, t), 1.0), (x(Var::Part, i, t), w_lo)],
                    Relation::Ge,
                    0.0,
                );
            }
        }
        for t in 0..horizon {
            let units = 0..self.units.len();
            m.add_constraint(
                format!("balance[{t}]"),
                units.clone().map(|i| (x(Var::P, i, t), 1.0)).collect(),
                Relation::Eq,
                self.net_load(t),
            );
            m.add_constraint(
                format!("participation[{t}]"),
                units.map(|i| (x(Var::Part, i, t), 1.0)).collect(),
                Relation::Eq,
                1.0,
            );
        }
        m
    }

    /// `max{D(x)·w, −D(x)·w}` with `D = Σ_{i,t} adjust_cost_i·part_it`.
    pub fn loss(&self) -> Result<PiecewiseAffineLoss, ReformulateError> {
        let lay = self.layout();
        let mut row = vec![0.0; lay.len()];
        for (i, unit) in self.units.iter().enumerate() {
            for t in 0..self.horizon() {
                row[lay.index(Var::Part, i, t)] = unit.adjust_cost;
            }
        }
        let neg: Vec<f64> = row.iter().map(|v| -v).collect();
        let zero = vec![0.0; lay.len()];
        PiecewiseAffineLoss::new(vec![
            AffinePiece { a: vec![row], c: vec![0.0], q: zero.clone(), r: 0.0 },
            AffinePiece { a: vec![neg], c: vec![0.0], q: zero, r: 0.0 },
        ])
    }

    pub fn problem(&self, norm: GroundNorm, mdro_resolution: f64) -> Result<DroProblem, UcError> {
        self.validate()?;
        Ok(DroProblem {
            loss: self.loss()?,
            support: Polytope::interval(self.error_support[0], self.error_support[1])?,
            decision: self.decision_model(),
            norm,
            mdro_resolution,
        })
    }

    /// Every violated constraint of decision `x`, checked directly against
    /// the instance data (no use of the assembled model).
    pub fn audit(&self, x: &[f64], tol: f64) -> Vec<String> {
        let lay = self.layout();
        let mut bad = Vec::new();
        if x.len() != lay.len() {
            bad.push(format!("decision has {} entries, expected {}", x.len(), lay.len()));
            return bad;
        }
        let get = |var, i, t| x[lay.index(var, i, t)];
        let [w_lo, w_hi] = self.error_support;
        let horizon = self.horizon();
        for (i, unit) in self.units.iter().enumerate() {
            let on = |t: usize| get(Var::S, i, t).round();
            let prev_on = |t: usize| if t == 0 { f64::from(u8::from(unit.initial_on)) } else { on(t - 1) };
            let prev_p = |t: usize| if t == 0 { unit.initial_power } else { get(Var::P, i, t - 1) };
            let mut check = |ok: bool, what: &str, t: usize| {
                if !ok {
                    bad.push(format!("unit {} period {t}: {what}", unit.name));
                }
            };
            for t in 0..horizon {
                for var in [Var::S, Var::U, Var::V] {
                    let v = get(var, i, t);
                    check((v - v.round()).abs() <= tol && (0.0..=1.0).contains(&v.round()), "binary", t);
                }
                let (s, u, v) = (on(t), get(Var::U, i, t).round(), get(Var::V, i, t).round());
                check(s - prev_on(t) == u - v, "start-up/shut-down bookkeeping", t);
                if s > prev_on(t) {
                    let end = (t + unit.min_up).min(horizon);
                    check((t..end).all(|k| on(k) == 1.0), "minimum up time", t);
                }
                if s < prev_on(t) {
                    let end = (t + unit.min_down).min(horizon);
                    check((t..end).all(|k| on(k) == 0.0), "minimum down time", t);
                }
                let (p, rup, rdn, part) = (get(Var::P, i, t), get(Var::Rup, i, t), get(Var::Rdn, i, t), get(Var::Part, i, t));
                check(rup >= -tol && rdn >= -tol, "negative reserve", t);
                check(p - rdn >= s * unit.p_min - tol, "lower capacity", t);
                check(p + rup <= s * unit.p_max + tol, "upper capacity", t);
                let (s_prev, rdn_prev, rup_prev) = if t == 0 {
                    (prev_on(0), 0.0, 0.0)
                } else {
                    (on(t - 1), get(Var::Rdn, i, t - 1), get(Var::Rup, i, t - 1))
                };
                // allowance by (previous, current) state
                let up_room = match (s_prev == 1.0, s == 1.0) {
                    (false, true) => unit.startup_ramp,
                    (true, true) => unit.ramp_up,
                    (true, false) => unit.startup_ramp + 2.0 * unit.ramp_up,
                    (false, false) => 2.0 * unit.startup_ramp + unit.ramp_up,
                };
                check(p + rup - (prev_p(t) - rdn_prev) <= up_room + tol, "ramp up", t);
                let down_room = match (s_prev == 1.0, s == 1.0) {
                    (true, false) => unit.shutdown_ramp,
                    (true, true) => unit.ramp_down,
                    (false, true) => unit.shutdown_ramp + 2.0 * unit.ramp_down,
                    (false, false) => 2.0 * unit.shutdown_ramp + unit.ramp_down,
                };
                check(prev_p(t) + rup_prev - (p - rdn) <= down_room + tol, "ramp down", t);
                check((-tol..=1.0 + tol).contains(&part), "participation outside [0, 1]", t);
                check(rdn >= part * w_hi - tol, "down reserve does not cover the largest error", t);
                check(rup >= -part * w_lo - tol, "up reserve does not cover the smallest error", t);
                if s == 1.0 {
                    check(get(Var::F, i, t) >= unit.generation_cost(p) - tol, "cost below the curve", t);
                }
            }
        }
        for t in 0..horizon {
            let total: f64 = (0..self.units.len()).map(|i| get(Var::P, i, t)).sum();
            if (total - self.net_load(t)).abs() > tol * (1.0 + self.net_load(t)) {
                bad.push(format!("period {t}: output {total} does not meet net load {}", self.net_load(t)));
            }
            let share: f64 = (0..self.units.len()).map(|i| get(Var::Part, i, t)).sum();
            if (share - 1.0).abs() > tol {
                bad.push(format!("period {t}: participation factors sum to {share}"));
            }
        }
        bad
    }
}

/// Best objective of `program` over every commitment pattern: each pattern
/// fixes the `s` variables of the decision block (which must come first) and
/// leaves an LP, since start-up and shut-down indicators then follow from
/// the transitions. Returns `None` when every pattern is infeasible.
pub fn enumerate_commitments(
    program: &ProgramDescription,
    layout: Layout,
    solver: &SolverConfig,
) -> Result<Option<(f64, Vec<bool>)>, SolveError> {
    let s: Vec<usize> = (0..layout.units)
        .flat_map(|i| (0..layout.horizon).map(move |t| layout.index(Var::S, i, t)))
        .collect();
    assert!(s.len() < 24, "too many commitment patterns to enumerate");
    let mut relaxed = program.clone();
    for v in &mut relaxed.variables {
        v.integer = false;
    }
    let mut best: Option<(f64, Vec<bool>)> = None;
    for mask in 0u32..1 << s.len() {
        let pattern: Vec<bool> = (0..s.len()).map(|k| mask >> k & 1 == 1).collect();
        let mut lp = relaxed.clone();
        for (&j, &on) in s.iter().zip(&pattern) {
            let v = if on { 1.0 } else { 0.0 };
            lp.variables[j].lower = v;
            lp.variables[j].upper = v;
        }
        let r = solve_lp(&lp, solver)?;
        if r.status == Status::Optimal {
            let obj = r.objective.expect("optimal");
            if best.as_ref().is_none_or(|b| obj < b.0) {
                best = Some((obj, pattern));
            }
        }
    }
    Ok(best)
}
