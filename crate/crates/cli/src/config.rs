//! Run configuration, read from a single TOML file.

use std::path::{Path, PathBuf};

use bnwdro::ambiguity::GroundNorm;
use bnwdro::dataset::MixtureSpec;
use bnwdro::dpmm::DpmmConfig;
use bnwdro::pipeline::Method;
use bnwdro::solve::SolverConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Newsvendor,
    Uc,
    Reliability,
    Sandwich,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Newsvendor => "newsvendor",
            Experiment::Uc => "uc",
            Experiment::Reliability => "reliability",
            Experiment::Sandwich => "sandwich",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewsvendorConfig {
    pub holding: f64,
    pub backlog: f64,
    /// Interval containing every demand.
    pub support: [f64; 2],
    /// Bounds on the order quantity.
    pub order: [f64; 2],
    pub mdro_resolution: f64,
}

impl Default for NewsvendorConfig {
    fn default() -> Self {
        Self {
            holding: 1.0,
            backlog: 3.0,
            support: [-10.0, 30.0],
            order: [0.0, 25.0],
            mdro_resolution: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UcConfig {
    /// Instance file (TOML). Relative paths resolve against the config file;
    /// `None` uses the built-in three-unit, six-period instance.
    pub instance: Option<PathBuf>,
    pub mdro_resolution: f64,
}

impl Default for UcConfig {
    fn default() -> Self {
        Self {
            instance: None,
            mdro_resolution: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandwichConfig {
    pub sets: usize,
    pub losses: usize,
    pub dim: usize,
}

impl Default for SandwichConfig {
    fn default() -> Self {
        Self { sets: 50, losses: 50, dim: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    /// Sample sizes N.
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub beta: f64,
    pub norm: GroundNorm,
    pub methods: Vec<Method>,
    pub output: PathBuf,
    /// Monte Carlo draws for the true cost of each trial's decision.
    pub mc_samples: usize,
    /// Sample size of the SAA problem defining the reference decision.
    pub reference_samples: usize,
    /// Monte Carlo draws for the true cost of the reference decision.
    pub reference_mc_samples: usize,
    pub sampler: MixtureSpec,
    pub newsvendor: NewsvendorConfig,
    pub uc: UcConfig,
    pub sandwich: SandwichConfig,
    pub dpmm: DpmmConfig,
    pub solver: SolverConfig,
}

/// The bimodal demand used by the newsvendor study.
pub fn bimodal_demand() -> MixtureSpec {
    MixtureSpec::scalar(&[(0.5, 5.0, 1.0), (0.5, 15.0, 1.0)])
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Newsvendor,
            seed: 2024,
            sizes: vec![25, 50, 100, 200, 400],
            trials: 50,
            beta: 0.95,
            norm: GroundNorm::L1,
            methods: Method::ALL.to_vec(),
            output: PathBuf::from("out"),
            mc_samples: 10_000,
            reference_samples: 10_000,
            reference_mc_samples: 100_000,
            sampler: bimodal_demand(),
            newsvendor: NewsvendorConfig::default(),
            uc: UcConfig::default(),
            sandwich: SandwichConfig::default(),
            dpmm: DpmmConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates `path`; a relative UC instance path is resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut config = Self::from_toml(&text)?;
        if let (Some(inst), Some(dir)) = (&config.uc.instance, path.parent()) {
            if inst.is_relative() {
                config.uc.instance = Some(dir.join(inst));
            }
        }
        Ok(config)
    }

    /// Full-scale Monte Carlo tier.
    pub fn slow(mut self) -> Self {
        self.mc_samples = 1_000_000;
        self.reference_mc_samples = 1_000_000;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return bad("sizes must be a nonempty list of positive sample sizes".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.mc_samples == 0 || self.reference_samples == 0 || self.reference_mc_samples == 0 {
            return bad("Monte Carlo and reference sample sizes must be positive".into());
        }
        if self.sampler.components.is_empty() {
            return bad("sampler needs at least one component".into());
        }
        if self.sampler.sampler().is_err() {
            return bad("sampler components must have positive weights and valid covariances".into());
        }
        let nv = &self.newsvendor;
        if !(nv.holding > 0.0 && nv.backlog > 0.0) {
            return bad("newsvendor holding and backlog costs must be positive".into());
        }
        if !(nv.support[0] <= nv.support[1] && nv.order[0] <= nv.order[1]) {
            return bad("newsvendor support and order bounds must be ordered intervals".into());
        }
        if !(nv.mdro_resolution > 0.0 && self.uc.mdro_resolution > 0.0) {
            return bad("mdro_resolution must be positive".into());
        }
        if self.sandwich.sets == 0 || self.sandwich.losses == 0 || !(1..=2).contains(&self.sandwich.dim) {
            return bad("sandwich needs positive set and loss counts and dim 1 or 2".into());
        }
        Ok(())
    }
}
