use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bnwdro::ambiguity::{build_bnwdro, build_wdro, format_radius, sandwich_radii};
use bnwdro::dataset::{load_csv, Dataset};
use bnwdro::dpmm::cluster;
use bnwdro::oracle::monte_carlo_cost;
use bnwdro::pipeline::{method_program, DroProblem, Method};
use bnwdro::program::ProgramDescription;
use bnwdro::solve::{solve, write_mps, Status};
use bnwdro_cli::config::{ConfigError, Experiment, RunConfig};
use bnwdro_cli::newsvendor;
use bnwdro_cli::study::{self, StudyError};
use bnwdro_cli::uc::UcError;
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "bnwdro", version, about = "Clustered Wasserstein DRO: clustering, calibration, programs and experiments")]
struct Cli {
    /// Run configuration (TOML); defaults apply without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file, or output directory for `experiment`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Full-scale Monte Carlo (10^6 samples).
    #[arg(long, global = true)]
    slow: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the mixture model and print labels and cluster weights.
    Cluster(DataArgs),
    /// Print per-cluster radii, the single-ball radius and the sandwich radii.
    Calibrate(DataArgs),
    /// Write the program of one method for the configured problem.
    Build {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        method: Method,
    },
    /// Solve a program file and print the result.
    Solve {
        #[arg(long)]
        program: PathBuf,
    },
    /// Monte Carlo cost of a decision under the configured distribution.
    Evaluate {
        /// Comma-separated decision values.
        #[arg(long)]
        decision: String,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Run the configured experiment and write its report.
    Experiment,
    /// Convert a program file to MPS.
    ExportMps {
        #[arg(long)]
        program: PathBuf,
    },
}

#[derive(clap::Args)]
struct DataArgs {
    /// CSV file, one observation per row.
    #[arg(long)]
    data: PathBuf,
    /// Skip a header line.
    #[arg(long)]
    header: bool,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Other(_) => 1,
        }
    }
}

impl From<StudyError> for CliError {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::Config(c) => CliError::Config(c),
            StudyError::Uc(UcError::InfeasibleInstance(_) | UcError::Parse(_) | UcError::Io(_)) => {
                CliError::Config(ConfigError::Invalid(e.to_string()))
            }
            StudyError::Reference(_) => CliError::Solver(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

fn other(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if cli.slow {
        config = config.slow();
    }
    Ok(config)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(other),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty(value: &impl serde::Serialize) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(other)?;
    s.push('\n');
    Ok(s)
}

fn load_data(args: &DataArgs) -> Result<Dataset, CliError> {
    load_csv(&args.data, args.header).map_err(other)
}

/// The problem an experiment config describes (newsvendor unless `uc`).
fn problem(config: &RunConfig) -> Result<DroProblem, CliError> {
    match config.experiment {
        Experiment::Uc => {
            let inst = study::uc_instance(config)?;
            Ok(inst.problem(config.norm, config.uc.mdro_resolution).map_err(StudyError::from)?)
        }
        _ => newsvendor::problem(&config.newsvendor, config.norm).map_err(other),
    }
}

fn read_program(path: &Path) -> Result<ProgramDescription, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| other(format!("{}: {e}", path.display())))?;
    ProgramDescription::from_json(&text).map_err(other)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(cli)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Cluster(args) => {
            let data = load_data(args)?;
            let mut dpmm = config.dpmm.clone();
            dpmm.seed = config.seed;
            let (posterior, clustering) = cluster(&data, &dpmm).map_err(other)?;
            let body = json!({
                "labels": clustering.labels,
                "weights": clustering.weights,
                "elbo": posterior.elbo_trace.last(),
                "converged": posterior.converged,
            });
            write_output(out, &pretty(&body)?)
        }
        Command::Calibrate(args) => {
            let data = load_data(args)?;
            let mut dpmm = config.dpmm.clone();
            dpmm.seed = config.seed;
            let (_, clustering) = cluster(&data, &dpmm).map_err(other)?;
            let set = build_bnwdro(&data, &clustering, config.beta).map_err(other)?;
            let balls = set.balls().expect("clustered set has balls");
            let wdro = build_wdro(&data, config.beta).map_err(other)?;
            let sandwich = sandwich_radii(&set).map_err(other)?;
            let body = json!({
                "beta": config.beta,
                "clusters": balls.iter().map(|b| json!({
                    "size": b.center.len(),
                    "weight": b.weight,
                    "radius": format_radius(b.radius),
                })).collect::<Vec<_>>(),
                "wdro_radius": format_radius(wdro.balls().expect("ball")[0].radius),
                "theta_lower": format_radius(sandwich.theta_lower),
                "theta_upper": format_radius(sandwich.theta_upper),
            });
            write_output(out, &pretty(&body)?)
        }
        Command::Build { data, method } => {
            let dataset = load_data(data)?;
            let problem = problem(&config)?;
            let mut options = study::pipeline_options(&config);
            options.dpmm.seed = config.seed;
            let (program, _) = method_program(&problem, *method, &dataset, &options).map_err(other)?;
            write_output(out, &program.to_canonical_json())
        }
        Command::Solve { program } => {
            let program = read_program(program)?;
            let result = solve(&program, &config.solver).map_err(|e| CliError::Solver(e.to_string()))?;
            let body = json!({
                "status": result.status,
                "objective": result.objective,
                "bound": result.bound,
                "values": program.variables.iter().zip(&result.values)
                    .map(|(v, x)| (v.name.clone(), json!(x)))
                    .collect::<serde_json::Map<_, _>>(),
                "iterations": result.stats.iterations,
                "nodes": result.stats.nodes,
            });
            write_output(out, &pretty(&body)?)?;
            match result.status {
                Status::Optimal => Ok(()),
                s => Err(CliError::Solver(format!("solver finished with status {s:?}"))),
            }
        }
        Command::Evaluate { decision, samples } => {
            let x: Vec<f64> = decision
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| other(format!("bad decision: {e}")))?;
            let problem = problem(&config)?;
            if x.len() != problem.decision.n() {
                return Err(other(format!("decision has {} entries, expected {}", x.len(), problem.decision.n())));
            }
            let sampler = match config.experiment {
                Experiment::Uc => study::uc_instance(&config)?.error,
                _ => config.sampler.clone(),
            };
            let n = samples.unwrap_or(config.mc_samples);
            let mc = monte_carlo_cost(&x, &problem.loss, &sampler, n, config.seed).map_err(other)?;
            let fixed = problem.decision.cost_of(&x);
            let body = json!({
                "samples": n,
                "first_stage": fixed,
                "expected_loss": mc.mean,
                "std_error": mc.std_error,
                "total": fixed + mc.mean,
            });
            write_output(out, &pretty(&body)?)
        }
        Command::Experiment => {
            let dir = out.map(Path::to_path_buf).unwrap_or_else(|| config.output.clone());
            std::fs::create_dir_all(&dir).map_err(|e| CliError::Config(ConfigError::Invalid(format!(
                "output directory {} is not writable: {e}",
                dir.display()
            ))))?;
            let outcome = study::run_experiment(&config)?;
            study::emit(&outcome, config.experiment, &dir)?;
            if let study::Outcome::Comparison(r) = &outcome {
                for w in &r.warnings {
                    eprintln!("warning: {w}");
                }
            }
            eprintln!("wrote {}", dir.display());
            Ok(())
        }
        Command::ExportMps { program } => {
            let program = read_program(program)?;
            write_output(out, &write_mps(&program).map_err(other)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
