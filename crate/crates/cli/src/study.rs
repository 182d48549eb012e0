//! Experiment drivers behind `bnwdro experiment`.

use std::fmt::Write as _;
use std::path::Path;

use bnwdro::ambiguity::{AmbiguitySet, LocalBall};
use bnwdro::dataset::{empirical, sample_mixture, Dataset, MixtureSpec};
use bnwdro::oracle::{monte_carlo_cost, reliability_experiment, sandwich_values, OracleError, ReliabilityConfig};
use bnwdro::pipeline::{solve_saa_cutting_plane, DroProblem, PipelineError, PipelineOptions};
use bnwdro::reformulate::{Polytope, ReformulateError};
use bnwdro::rng::stream_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Experiment, RunConfig};
use crate::report::{emit_report, ComparisonReport, Reference, ReportError, TrialRow};
use crate::newsvendor;
use crate::uc::{UcError, UcInstance};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Uc(#[from] UcError),
    #[error("reference solve failed: {0}")]
    Reference(#[source] PipelineError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Reformulate(#[from] ReformulateError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot serialise output: {0}")]
    Json(#[from] serde_json::Error),
}

/// Offset separating the reference sample's seed from the trial seeds
/// `seed + t`.
const REFERENCE_SEED_OFFSET: u64 = 1 << 40;

pub fn pipeline_options(config: &RunConfig) -> PipelineOptions {
    PipelineOptions {
        beta: config.beta,
        dpmm: config.dpmm.clone(),
        solver: config.solver.clone(),
        forced_radius: None,
    }
}

/// SAA on `reference_samples` fresh draws, evaluated by Monte Carlo.
pub fn reference(problem: &DroProblem, sampler: &MixtureSpec, config: &RunConfig) -> Result<Reference, StudyError> {
    let seed = config.seed.wrapping_add(REFERENCE_SEED_OFFSET);
    let data = sample_mixture(sampler, config.reference_samples, seed).map_err(OracleError::from)?;
    let sol = solve_saa_cutting_plane(problem, &data, &config.solver).map_err(StudyError::Reference)?;
    let mc = monte_carlo_cost(&sol.decision, &problem.loss, sampler, config.reference_mc_samples, seed)?;
    Ok(Reference {
        samples: config.reference_samples,
        mc_samples: config.reference_mc_samples,
        cost: problem.decision.cost_of(&sol.decision) + mc.mean,
        std_error: mc.std_error,
        decision: sol.decision,
    })
}

/// Runs every configured method on the same `trials` datasets per N (trial
/// `t` draws with seed `seed + t`, so methods are compared on paired data).
pub fn run_comparison(
    experiment: &str,
    problem: &DroProblem,
    sampler: &MixtureSpec,
    config: &RunConfig,
) -> Result<ComparisonReport, StudyError> {
    let reference = reference(problem, sampler, config)?;
    let options = pipeline_options(config);
    let mut trials = Vec::new();
    for &method in &config.methods {
        for &n in &config.sizes {
            let rc = ReliabilityConfig {
                trials: config.trials,
                n,
                sampler: sampler.clone(),
                method,
                seed: config.seed,
                mc_samples: config.mc_samples,
            };
            let rel = reliability_experiment(problem, &rc, &options);
            trials.extend(rel.records.into_iter().map(|r| TrialRow {
                method,
                n,
                trial: r.trial,
                certificate: r.error.is_none().then_some(r.certificate),
                true_cost: r.error.is_none().then_some(r.true_cost),
                covered: r.covered,
                decision: r.decision,
                error: r.error,
            }));
        }
    }
    Ok(ComparisonReport::assemble(
        experiment,
        config.seed,
        config.beta,
        &config.sizes,
        &config.methods,
        Some(reference),
        trials,
    ))
}

pub fn run_newsvendor(config: &RunConfig) -> Result<ComparisonReport, StudyError> {
    let problem = newsvendor::problem(&config.newsvendor, config.norm)?;
    run_comparison(config.experiment.name(), &problem, &config.sampler, config)
}

pub fn uc_instance(config: &RunConfig) -> Result<UcInstance, StudyError> {
    Ok(match &config.uc.instance {
        Some(path) => UcInstance::load(path)?,
        None => UcInstance::mini(),
    })
}

/// The comparison on a unit-commitment instance. Data are drawn from the
/// instance's own error distribution; every returned decision is audited and
/// violations are reported as warnings.
pub fn run_uc(config: &RunConfig, instance: &UcInstance) -> Result<ComparisonReport, StudyError> {
    let problem = instance.problem(config.norm, config.uc.mdro_resolution)?;
    let mut report = run_comparison(Experiment::Uc.name(), &problem, &instance.error, config)?;
    let mut audit = Vec::new();
    for r in report.trials.iter().filter(|r| r.error.is_none()) {
        for v in instance.audit(&r.decision, 1e-6) {
            audit.push(format!("{} N={} trial {}: {v}", r.method.name(), r.n, r.trial));
        }
    }
    report.warnings.extend(audit);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichEntry {
    pub set: usize,
    pub loss: usize,
    pub v_low: f64,
    pub v_mid: f64,
    pub v_high: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub seed: u64,
    pub dim: usize,
    pub sets: usize,
    pub losses: usize,
    pub violations: usize,
    pub rows: Vec<SandwichEntry>,
}

fn random_set<R: Rng>(rng: &mut R, dim: usize) -> AmbiguitySet {
    let k = rng.random_range(2..=3);
    let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(1..=5)).collect();
    let total: usize = sizes.iter().sum();
    let balls = sizes
        .iter()
        .map(|&m| {
            let rows: Vec<Vec<f64>> = (0..m).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            LocalBall {
                center: empirical(&Dataset::from_rows(rows, "sandwich").expect("finite rows")),
                radius: rng.random_range(0.0..0.5),
                weight: m as f64 / total as f64,
            }
        })
        .collect();
    AmbiguitySet::Bnwdro { balls }
}

fn random_loss<R: Rng>(rng: &mut R, dim: usize) -> Vec<(Vec<f64>, f64)> {
    (0..rng.random_range(1..=4))
        .map(|_| ((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(), rng.random_range(-1.0..1.0)))
        .collect()
}

/// Values at the smallest-radius ball, the clustered set and the
/// largest-radius ball for random sets and losses on `[-1, 1]^dim`.
pub fn run_sandwich(config: &RunConfig) -> Result<SandwichReport, StudyError> {
    let sc = &config.sandwich;
    let support = Polytope::boxed(&vec![-1.0; sc.dim], &vec![1.0; sc.dim])?;
    let mut rng = stream_rng(config.seed, 0);
    let mut rows = Vec::new();
    for set_id in 0..sc.sets {
        let set = random_set(&mut rng, sc.dim);
        let losses: Vec<_> = (0..sc.losses).map(|_| random_loss(&mut rng, sc.dim)).collect();
        for r in sandwich_values(&set, &losses, &support, config.norm)? {
            rows.push(SandwichEntry {
                set: set_id,
                loss: r.loss,
                v_low: r.v_low,
                v_mid: r.v_mid,
                v_high: r.v_high,
                holds: r.holds(1e-7),
            });
        }
    }
    Ok(SandwichReport {
        seed: config.seed,
        dim: sc.dim,
        sets: sc.sets,
        losses: sc.losses,
        violations: rows.iter().filter(|r| !r.holds).count(),
        rows,
    })
}

pub fn emit_sandwich(report: &SandwichReport, dir: &Path) -> Result<(), StudyError> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(dir.join("sandwich.json"), json)?;
    let mut csv = String::from("set,loss,v_low,v_mid,v_high,holds\n");
    for r in &report.rows {
        let _ = writeln!(csv, "{},{},{},{},{},{}", r.set, r.loss, r.v_low, r.v_mid, r.v_high, r.holds);
    }
    std::fs::write(dir.join("sandwich.csv"), csv)?;
    Ok(())
}

/// Per-(method, N) coverage with its interval, one row each.
pub fn reliability_csv(report: &ComparisonReport) -> String {
    let mut out = String::from("method,n,trials,covered,coverage,lower,upper\n");
    for row in &report.rows {
        let covered = report.trials.iter().filter(|t| t.method == row.method && t.n == row.n && t.covered).count();
        if let Some(b) = row.reliability {
            let _ = writeln!(out, "{},{},{},{covered},{},{},{}", row.method.name(), row.n, row.trials, b.mean, b.q10, b.q90);
        }
    }
    out
}

pub enum Outcome {
    Comparison(ComparisonReport),
    Sandwich(SandwichReport),
}

pub fn run_experiment(config: &RunConfig) -> Result<Outcome, StudyError> {
    Ok(match config.experiment {
        Experiment::Newsvendor | Experiment::Reliability => Outcome::Comparison(run_newsvendor(config)?),
        Experiment::Uc => Outcome::Comparison(run_uc(config, &uc_instance(config)?)?),
        Experiment::Sandwich => Outcome::Sandwich(run_sandwich(config)?),
    })
}

pub fn emit(outcome: &Outcome, experiment: Experiment, dir: &Path) -> Result<(), StudyError> {
    match outcome {
        Outcome::Comparison(r) => {
            emit_report(r, dir)?;
            if experiment == Experiment::Reliability {
                std::fs::write(dir.join("reliability.csv"), reliability_csv(r))?;
            }
        }
        Outcome::Sandwich(r) => emit_sandwich(r, dir)?,
    }
    Ok(())
}
