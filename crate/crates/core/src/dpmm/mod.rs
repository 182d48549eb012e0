//! Truncated stick-breaking Dirichlet process Gaussian mixture fitted by
//! mean-field variational inference, and the hard clustering derived from it.
//!
//! The variational family is
//! `q(v) q(μ, Λ) q(z) = Π_k Beta(v_k | γ1_k, γ2_k) · NW(μ_k, Λ_k | m_k, β_k, W_k, ν_k) · Π_l Cat(z_l | r_l)`
//! with the last stick fixed at one. Each sweep is an E-step (responsibilities)
//! followed by an M-step (stick and component posteriors); the bound is
//! evaluated after the M-step, so the recorded trace is non-decreasing. A
//! sweep may also permute components into decreasing-mass order when that
//! does not lower the bound.

pub mod special;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::rng::stream_rng;
use special::{digamma, ln_beta, ln_gamma};

const LOG_FLOOR: f64 = 1e-300;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error, PartialEq)]
pub enum DpmmError {
    #[error("need at least two points to fit a mixture, got {0}")]
    TooFewPoints(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("posterior scale matrix of component {component} is not positive definite")]
    SingularCovariance { component: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalWishartPrior {
    pub mu0: Vec<f64>,
    pub lambda0: f64,
    pub w0: Vec<Vec<f64>>,
    pub nu0: f64,
}

impl NormalWishartPrior {
    /// Data-scaled default: centred at the sample mean with an expected
    /// precision matching the sample covariance (plus a small ridge).
    pub fn from_data(dataset: &Dataset) -> Self {
        let m = dataset.dim();
        let nu0 = m as f64 + 2.0;
        let cov = dataset.central_second_moment();
        let scaled = DMatrix::from_fn(m, m, |a, b| nu0 * cov[a][b] + if a == b { 1e-6 } else { 0.0 });
        let w0 = scaled.try_inverse().expect("ridge keeps the matrix invertible");
        Self {
            mu0: dataset.column_means(),
            lambda0: 1.0,
            w0: (0..m).map(|a| (0..m).map(|b| w0[(a, b)]).collect()).collect(),
            nu0,
        }
    }

    fn validate(&self, m: usize) -> Result<(), DpmmError> {
        let bad = |msg: &str| Err(DpmmError::InvalidConfig(msg.to_string()));
        if self.mu0.len() != m || self.w0.len() != m || self.w0.iter().any(|r| r.len() != m) {
            return bad("prior dimension does not match the data");
        }
        if !(self.lambda0 > 0.0) {
            return bad("lambda0 must be positive");
        }
        if !(self.nu0 > m as f64 - 1.0) {
            return bad("nu0 must exceed m - 1");
        }
        let w0 = to_matrix(&self.w0);
        if (&w0 - w0.transpose()).amax() > 1e-9 * w0.amax().max(1.0) || w0.cholesky().is_none() {
            return bad("W0 must be symmetric positive definite");
        }
        Ok(())
    }
}

/// Fitting options. Fields left as `None` take data-dependent defaults:
/// truncation `min(N, 20)`, the prior of [`NormalWishartPrior::from_data`],
/// and a survival threshold of `1/N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpmmConfig {
    pub concentration: f64,
    pub truncation: Option<usize>,
    pub prior: Option<NormalWishartPrior>,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub min_cluster_weight: Option<f64>,
}

impl Default for DpmmConfig {
    fn default() -> Self {
        Self {
            concentration: 1.0,
            truncation: None,
            prior: None,
            tol: 1e-6,
            max_iters: 500,
            seed: 0,
            min_cluster_weight: None,
        }
    }
}

impl DpmmConfig {
    pub fn truncation_for(&self, n: usize) -> usize {
        self.truncation.unwrap_or(n.min(20))
    }

    pub fn min_weight_for(&self, n: usize) -> f64 {
        self.min_cluster_weight.unwrap_or(1.0 / n as f64)
    }

    fn validate(&self) -> Result<(), DpmmError> {
        let bad = |msg: &str| Err(DpmmError::InvalidConfig(msg.to_string()));
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return bad("concentration must be positive");
        }
        if self.truncation == Some(0) {
            return bad("truncation must be at least 1");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1");
        }
        if let Some(w) = self.min_cluster_weight {
            if !(0.0..1.0).contains(&w) {
                return bad("min_cluster_weight must lie in [0, 1)");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentPosterior {
    pub mean: Vec<f64>,
    pub lambda: f64,
    pub w: Vec<Vec<f64>>,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpmmPosterior {
    /// `N x T`, row `l` is the label distribution of point `l`.
    pub responsibilities: Vec<Vec<f64>>,
    /// Beta parameters of each stick; the last stick is fixed at one and is
    /// reported as `(1, 0)`.
    pub stick_params: Vec<(f64, f64)>,
    pub component_params: Vec<ComponentPosterior>,
    pub expected_weights: Vec<f64>,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
    pub min_cluster_weight: f64,
}

/// Hard partition of the rows of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Zero-based cluster index of each row.
    pub labels: Vec<usize>,
    #[serde(skip)]
    pub clusters: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    /// Cluster sizes; these sum to `N` exactly.
    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let m = rows.len();
    DMatrix::from_fn(m, m, |a, b| rows[a][b])
}

fn from_matrix(w: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..w.nrows()).map(|a| (0..w.ncols()).map(|b| w[(a, b)]).collect()).collect()
}

#[derive(Clone)]
struct Component {
    mean: DVector<f64>,
    beta: f64,
    w: DMatrix<f64>,
    nu: f64,
    ln_det_w: f64,
}

impl Component {
    fn e_ln_det_lambda(&self, d: usize) -> f64 {
        (1..=d).map(|i| digamma((self.nu + 1.0 - i as f64) / 2.0)).sum::<f64>()
            + d as f64 * std::f64::consts::LN_2
            + self.ln_det_w
    }

    fn quad(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        diff.dot(&(&self.w * &diff))
    }
}

/// `ln B(W, ν)`, the log normaliser of a Wishart density.
fn ln_wishart_norm(ln_det_w: f64, nu: f64, d: usize) -> f64 {
    let df = d as f64;
    -0.5 * nu * ln_det_w
        - 0.5 * nu * df * std::f64::consts::LN_2
        - 0.25 * df * (df - 1.0) * std::f64::consts::PI.ln()
        - (1..=d).map(|i| ln_gamma((nu + 1.0 - i as f64) / 2.0)).sum::<f64>()
}

struct Fit {
    x: Vec<DVector<f64>>,
    d: usize,
    h: f64,
    mu0: DVector<f64>,
    beta0: f64,
    w0_inv: DMatrix<f64>,
    nu0: f64,
    ln_b0: f64,
    resp: Vec<Vec<f64>>,
    gamma: Vec<(f64, f64)>,
    comps: Vec<Component>,
}

impl Fit {
    fn t(&self) -> usize {
        self.gamma.len()
    }

    fn m_step(&mut self) -> Result<(), DpmmError> {
        let t = self.t();
        let d = self.d;
        let mut counts = vec![0.0; t];
        for row in &self.resp {
            for (c, r) in counts.iter_mut().zip(row) {
                *c += r;
            }
        }
        for k in 0..t {
            let nk = counts[k];
            let mut xbar = DVector::zeros(d);
            if nk > 1e-10 {
                for (x, row) in self.x.iter().zip(&self.resp) {
                    xbar.axpy(row[k], x, 1.0);
                }
                xbar /= nk;
            } else {
                xbar.copy_from(&self.mu0);
            }
            // scatter about the weighted mean, accumulated centred
            let mut scatter = DMatrix::zeros(d, d);
            for (x, row) in self.x.iter().zip(&self.resp) {
                if row[k] > 0.0 {
                    let diff = x - &xbar;
                    scatter.ger(row[k], &diff, &diff, 1.0);
                }
            }
            let beta = self.beta0 + nk;
            let dm = &xbar - &self.mu0;
            let mut w_inv = &self.w0_inv + scatter;
            w_inv.ger(self.beta0 * nk / beta, &dm, &dm, 1.0);
            w_inv = (&w_inv + w_inv.transpose()) * 0.5;
            let chol = w_inv.cholesky().ok_or(DpmmError::SingularCovariance { component: k })?;
            let ln_det_w_inv = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let w = chol.inverse();
            if !ln_det_w_inv.is_finite() {
                return Err(DpmmError::SingularCovariance { component: k });
            }
            self.comps[k] = Component {
                mean: (&self.mu0 * self.beta0 + &xbar * nk) / beta,
                beta,
                w,
                nu: self.nu0 + nk,
                ln_det_w: -ln_det_w_inv,
            };
        }
        let mut tail: f64 = counts.iter().sum();
        for k in 0..t {
            tail -= counts[k];
            self.gamma[k] = if k + 1 < t {
                (1.0 + counts[k], self.h + tail.max(0.0))
            } else {
                (1.0, 0.0)
            };
        }
        Ok(())
    }

    /// `(E ln v_k, E ln (1 - v_k))` for each stick.
    fn stick_logs(&self) -> Vec<(f64, f64)> {
        let t = self.t();
        self.gamma
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| {
                if k + 1 == t {
                    (0.0, f64::NEG_INFINITY)
                } else {
                    let s = digamma(a + b);
                    (digamma(a) - s, digamma(b) - s)
                }
            })
            .collect()
    }

    fn e_ln_pi(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.stick_logs()
            .into_iter()
            .map(|(lv, l1v)| {
                let v = acc + lv;
                acc += l1v;
                v
            })
            .collect()
    }

    fn e_step(&mut self) {
        let d = self.d;
        let ln_pi = self.e_ln_pi();
        let e_ln_lambda: Vec<f64> = self.comps.iter().map(|c| c.e_ln_det_lambda(d)).collect();
        for (x, row) in self.x.iter().zip(self.resp.iter_mut()) {
            for (k, c) in self.comps.iter().enumerate() {
                row[k] = ln_pi[k] + 0.5 * e_ln_lambda[k]
                    - 0.5 * d as f64 * LN_2PI
                    - 0.5 * (d as f64 / c.beta + c.nu * c.quad(x));
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
    }

    fn elbo(&self) -> f64 {
        let d = self.d;
        let df = d as f64;
        let t = self.t();
        let ln_pi = self.e_ln_pi();
        let sticks = self.stick_logs();
        let e_ln_lambda: Vec<f64> = self.comps.iter().map(|c| c.e_ln_det_lambda(d)).collect();

        let mut total = 0.0;
        // likelihood, label prior and label entropy
        for (x, row) in self.x.iter().zip(&self.resp) {
            for (k, c) in self.comps.iter().enumerate() {
                let r = row[k];
                if r == 0.0 {
                    continue;
                }
                let loglik = 0.5 * (e_ln_lambda[k] - df * LN_2PI - df / c.beta - c.nu * c.quad(x));
                total += r * (loglik + ln_pi[k] - r.max(LOG_FLOOR).ln());
            }
        }
        // sticks: prior Beta(1, h) minus variational entropy term
        for k in 0..t.saturating_sub(1) {
            let (a, b) = self.gamma[k];
            let (lv, l1v) = sticks[k];
            total += self.h.ln() + (self.h - 1.0) * l1v;
            total -= (a - 1.0) * lv + (b - 1.0) * l1v - ln_beta(a, b);
        }
        // component parameters
        for (k, c) in self.comps.iter().enumerate() {
            let dm = &c.mean - &self.mu0;
            let trace = (&self.w0_inv * &c.w).trace();
            let prior = 0.5
                * (df * (self.beta0 / (2.0 * std::f64::consts::PI)).ln() + e_ln_lambda[k]
                    - df * self.beta0 / c.beta
                    - self.beta0 * c.nu * dm.dot(&(&c.w * &dm)))
                + self.ln_b0
                + 0.5 * (self.nu0 - df - 1.0) * e_ln_lambda[k]
                - 0.5 * c.nu * trace;
            let entropy_lambda =
                -ln_wishart_norm(c.ln_det_w, c.nu, d) - 0.5 * (c.nu - df - 1.0) * e_ln_lambda[k] + 0.5 * c.nu * df;
            let q = 0.5 * e_ln_lambda[k] + 0.5 * df * (c.beta / (2.0 * std::f64::consts::PI)).ln() - 0.5 * df
                - entropy_lambda;
            total += prior - q;
        }
        total
    }

    /// Column order by decreasing responsibility mass, if not already sorted.
    fn size_order(&self) -> Option<Vec<usize>> {
        let t = self.t();
        let mut mass = vec![0.0; t];
        for row in &self.resp {
            mass.iter_mut().zip(row).for_each(|(m, r)| *m += r);
        }
        let mut order: Vec<usize> = (0..t).collect();
        order.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]).then(a.cmp(&b)));
        order.iter().enumerate().any(|(i, &k)| i != k).then_some(order)
    }

    /// Moves mass-heavy components to the front of the stick, where the prior
    /// favours them; kept only when the bound does not drop.
    fn try_reorder(&mut self, current: f64) -> Result<f64, DpmmError> {
        let Some(order) = self.size_order() else {
            return Ok(current);
        };
        let saved = (self.resp.clone(), self.gamma.clone(), self.comps.clone());
        for row in self.resp.iter_mut() {
            *row = order.iter().map(|&k| row[k]).collect();
        }
        self.m_step()?;
        let value = self.elbo();
        if value >= current {
            return Ok(value);
        }
        (self.resp, self.gamma, self.comps) = saved;
        Ok(current)
    }

    fn expected_weights(&self) -> Vec<f64> {
        let t = self.t();
        let mut rest = 1.0;
        self.gamma
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| {
                let ev = if k + 1 == t { 1.0 } else { a / (a + b) };
                let w = rest * ev;
                rest *= 1.0 - ev;
                w
            })
            .collect()
    }
}

/// k-means++ seeding followed by nearest-centre assignment. Returns one-hot
/// responsibilities with clusters ordered by decreasing size.
fn kmeanspp_responsibilities(data: &Dataset, t: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut rng = stream_rng(seed, 0);
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centres = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = data.rows().map(|r| dist2(r, data.row(centres[0]))).collect();
    while centres.len() < t {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centres.push(pick);
        for (i, r) in data.rows().enumerate() {
            nearest[i] = nearest[i].min(dist2(r, data.row(pick)));
        }
    }
    let assign: Vec<usize> = data
        .rows()
        .map(|r| {
            let mut best = (0, f64::INFINITY);
            for (k, &c) in centres.iter().enumerate() {
                let d = dist2(r, data.row(c));
                if d < best.1 {
                    best = (k, d);
                }
            }
            best.0
        })
        .collect();
    let mut sizes = vec![0usize; t];
    assign.iter().for_each(|&k| sizes[k] += 1);
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut rank = vec![0; t];
    for (r, &k) in order.iter().enumerate() {
        rank[k] = r;
    }
    assign
        .iter()
        .map(|&k| {
            let mut row = vec![0.0; t];
            row[rank[k]] = 1.0;
            row
        })
        .collect()
}

/// Fits the variational posterior. Non-convergence within `max_iters` is
/// reported through [`DpmmPosterior::converged`], not as an error.
pub fn fit(dataset: &Dataset, config: &DpmmConfig) -> Result<DpmmPosterior, DpmmError> {
    let n = dataset.len();
    if n < 2 {
        return Err(DpmmError::TooFewPoints(n));
    }
    config.validate()?;
    let d = dataset.dim();
    let prior = config.prior.clone().unwrap_or_else(|| NormalWishartPrior::from_data(dataset));
    prior.validate(d)?;
    let t = config.truncation_for(n);

    let w0 = to_matrix(&prior.w0);
    let ln_det_w0 = 2.0 * w0.clone().cholesky().expect("validated").l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut state = Fit {
        x: dataset.rows().map(DVector::from_row_slice).collect(),
        d,
        h: config.concentration,
        mu0: DVector::from_vec(prior.mu0.clone()),
        beta0: prior.lambda0,
        w0_inv: w0.try_inverse().expect("validated"),
        nu0: prior.nu0,
        ln_b0: ln_wishart_norm(ln_det_w0, prior.nu0, d),
        resp: kmeanspp_responsibilities(dataset, t, config.seed),
        gamma: vec![(1.0, 1.0); t],
        comps: (0..t)
            .map(|_| Component {
                mean: DVector::zeros(d),
                beta: 1.0,
                w: DMatrix::identity(d, d),
                nu: 1.0,
                ln_det_w: 0.0,
            })
            .collect(),
    };

    state.m_step()?;
    let mut trace = vec![state.elbo()];
    let mut converged = false;
    for _ in 0..config.max_iters {
        state.e_step();
        state.m_step()?;
        let value = state.elbo();
        let value = state.try_reorder(value)?;
        let prev = *trace.last().expect("non-empty");
        trace.push(value);
        if (value - prev).abs() <= config.tol * prev.abs().max(1e-12) {
            converged = true;
            break;
        }
    }

    Ok(DpmmPosterior {
        expected_weights: state.expected_weights(),
        component_params: state
            .comps
            .iter()
            .map(|c| ComponentPosterior {
                mean: c.mean.iter().copied().collect(),
                lambda: c.beta,
                w: from_matrix(&c.w),
                nu: c.nu,
            })
            .collect(),
        stick_params: state.gamma,
        responsibilities: state.resp,
        elbo_trace: trace,
        converged,
        min_cluster_weight: config.min_weight_for(n),
    })
}

/// Per-row argmax of the responsibilities, ties going to the smaller index.
pub fn hard_labels(posterior: &DpmmPosterior) -> Vec<usize> {
    posterior.responsibilities.iter().map(|row| argmax(row, |_| true)).collect()
}

fn argmax(row: &[f64], allowed: impl Fn(usize) -> bool) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (k, &v) in row.iter().enumerate() {
        if allowed(k) && best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.map_or(0, |b| b.0)
}

/// Groups rows by label; clusters are numbered in order of first appearance.
pub fn partition(n: usize, labels: &[usize]) -> Clustering {
    assert_eq!(labels.len(), n, "one label per row");
    let mut index = std::collections::HashMap::new();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let relabeled = labels
        .iter()
        .enumerate()
        .map(|(row, &l)| {
            let k = *index.entry(l).or_insert_with(|| {
                clusters.push(Vec::new());
                clusters.len() - 1
            });
            clusters[k].push(row);
            k
        })
        .collect();
    let weights = clusters.iter().map(|c| c.len() as f64 / n as f64).collect();
    Clustering {
        labels: relabeled,
        clusters,
        weights,
    }
}

/// Hard labels restricted to components whose expected weight reaches the
/// posterior's survival threshold; points of pruned components are absorbed
/// by their most responsible surviving component.
pub fn surviving_labels(posterior: &DpmmPosterior) -> Vec<usize> {
    let alive: Vec<bool> = posterior
        .expected_weights
        .iter()
        .map(|&w| w >= posterior.min_cluster_weight)
        .collect();
    let any = alive.iter().any(|&a| a);
    posterior
        .responsibilities
        .iter()
        .map(|row| argmax(row, |k| !any || alive[k]))
        .collect()
}

/// Fits the mixture and returns it together with the absorbed hard partition.
pub fn cluster(dataset: &Dataset, config: &DpmmConfig) -> Result<(DpmmPosterior, Clustering), DpmmError> {
    let posterior = fit(dataset, config)?;
    let clustering = partition(dataset.len(), &surviving_labels(&posterior));
    Ok((posterior, clustering))
}

/// Adjusted Rand index between two labelings of the same rows.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut table = std::collections::HashMap::<(usize, usize), u64>::new();
    let mut ra = std::collections::HashMap::<usize, u64>::new();
    let mut rb = std::collections::HashMap::<usize, u64>::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let pairs = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&v| pairs(v)).sum();
    let sa: f64 = ra.values().map(|&v| pairs(v)).sum();
    let sb: f64 = rb.values().map(|&v| pairs(v)).sum();
    let total = pairs(a.len() as u64);
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
