//! Experiment configuration files.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use pskf_core::stats::solve_eta_for_lambda;
use pskf_core::{LinearSystem, SchedulerConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] pskf_core::Error),
}

impl ConfigError {
    /// True for failures to obtain a config document at all, as opposed to a
    /// document that was read but does not describe a valid experiment.
    pub fn is_unreadable(&self) -> bool {
        matches!(self, ConfigError::Read { .. } | ConfigError::Parse { .. })
    }
}

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
    pub x0_mean: Vec<f64>,
    #[serde(rename = "P0")]
    pub p0: Rows,
}

/// One component's threshold: exactly one of the two fields.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSpec {
    pub beta: f64,
    pub delta_high: f64,
    pub delta_low: f64,
    pub thresholds: Vec<ThresholdSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisFlags {
    #[serde(default = "yes")]
    pub mare_iterate: bool,
    #[serde(default = "yes")]
    pub necessary: bool,
    #[serde(default = "yes")]
    pub sufficient: bool,
}

fn yes() -> bool {
    true
}

impl Default for AnalysisFlags {
    fn default() -> Self {
        Self {
            mare_iterate: true,
            necessary: true,
            sufficient: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub full_matrices: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            full_matrices: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub scheduler: SchedulerSpec,
    pub horizon: usize,
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub analysis: AnalysisFlags,
    #[serde(default)]
    pub output: OutputSpec,
}

/// A validated experiment, ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    /// The system as written in the config.
    pub system: LinearSystem,
    /// The system the filter runs on (`R` diagonal, whitened if necessary).
    pub working: LinearSystem,
    pub whitened: bool,
    pub scheduler: SchedulerConfig,
    pub horizon: usize,
    pub trials: usize,
    pub master_seed: u64,
    pub analysis: AnalysisFlags,
    pub output: OutputSpec,
}

fn matrix(name: &str, rows: &Rows) -> Result<DMatrix<f64>, ConfigError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(ConfigError::Invalid(format!("{name} is empty")));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(ConfigError::Invalid(format!(
            "{name} row {bad} has {} entries, expected {ncols}",
            rows[bad].len()
        )));
    }
    let m = DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(ConfigError::Invalid(format!("{name} has a non-finite entry")));
    }
    Ok(m)
}

pub fn rows_of(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl SystemSpec {
    pub fn build(&self) -> Result<LinearSystem, ConfigError> {
        let x0 = DVector::from_vec(self.x0_mean.clone());
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(ConfigError::Invalid("x0_mean has a non-finite entry".into()));
        }
        Ok(LinearSystem::new(
            matrix("A", &self.a)?,
            matrix("C", &self.c)?,
            matrix("Q", &self.q)?,
            matrix("R", &self.r)?,
            x0,
            matrix("P0", &self.p0)?,
        )?)
    }

    pub fn from_system(sys: &LinearSystem) -> Self {
        Self {
            a: rows_of(&sys.a),
            c: rows_of(&sys.c),
            q: rows_of(&sys.q),
            r: rows_of(&sys.r),
            x0_mean: sys.x0_mean.iter().copied().collect(),
            p0: rows_of(&sys.p0),
        }
    }
}

impl SchedulerSpec {
    /// Resolves every threshold to an `eta`, solving for it when a target
    /// rate is given.
    pub fn resolve(&self, m: usize) -> Result<SchedulerConfig, ConfigError> {
        if self.thresholds.len() != m {
            return Err(ConfigError::Invalid(format!(
                "{} thresholds given for {m} measurement components",
                self.thresholds.len()
            )));
        }
        let eta = self
            .thresholds
            .iter()
            .enumerate()
            .map(|(i, t)| match (t.eta, t.lambda_target) {
                (Some(e), None) => Ok(e),
                (None, Some(l)) => Ok(solve_eta_for_lambda(l, self.beta)?),
                _ => Err(ConfigError::Invalid(format!(
                    "threshold {i}: give exactly one of eta or lambda_target"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SchedulerConfig::new(eta, self.beta, self.delta_high, self.delta_low)?)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_experiment(&self) -> Result<Experiment, ConfigError> {
        if self.trials == 0 {
            return Err(ConfigError::Invalid("trials must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(ConfigError::Invalid("horizon must be at least 1".into()));
        }
        let system = self.system.build()?;
        let whitened = !system.r_is_diagonal();
        let working = if whitened { system.whiten()? } else { system.clone() };
        let scheduler = self.scheduler.resolve(system.meas_dim())?;
        Ok(Experiment {
            system,
            working,
            whitened,
            scheduler,
            horizon: self.horizon,
            trials: self.trials,
            master_seed: self.master_seed,
            analysis: self.analysis,
            output: self.output.clone(),
        })
    }
}

impl Experiment {
    /// The config that reproduces this experiment with every threshold given
    /// as a resolved `eta`.
    pub fn effective_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            system: SystemSpec::from_system(&self.system),
            scheduler: SchedulerSpec {
                beta: self.scheduler.beta,
                delta_high: self.scheduler.delta_high,
                delta_low: self.scheduler.delta_low,
                thresholds: self
                    .scheduler
                    .eta
                    .iter()
                    .map(|&e| ThresholdSpec {
                        eta: Some(e),
                        lambda_target: None,
                    })
                    .collect(),
            },
            horizon: self.horizon,
            trials: self.trials,
            master_seed: self.master_seed,
            analysis: self.analysis,
            output: self.output.clone(),
        }
    }
}
