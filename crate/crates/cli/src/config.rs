use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cfdbal::balance::{BalanceConfig, BalanceMode, Lambda};
use cfdbal::estimators::Estimand;
use cfdbal::inference::InferenceSettings;
use cfdbal::kernels::{Bandwidth, DensitySpec};
use cfdbal::qp::QpSettings;
use cfdbal::sim::ScenarioConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Which columns of the input CSV play which role.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnSpec {
    pub outcome: String,
    /// Treatment indicator, or the instrument when a receipt column is given.
    pub treatment: String,
    pub receipt: Option<String>,
    pub covariates: Vec<String>,
    /// Covariates min-max scaled to [0, 1]; the rest must be binary.
    pub continuous: Vec<String>,
}

impl ColumnSpec {
    pub fn validate(&self) -> Result<()> {
        if self.outcome.is_empty() || self.treatment.is_empty() {
            return Err(CliError::Config("outcome and treatment columns are required".into()));
        }
        if self.covariates.is_empty() {
            return Err(CliError::Config("at least one covariate column is required".into()));
        }
        let mut seen = HashSet::new();
        let roles = [&self.outcome, &self.treatment].into_iter().chain(&self.receipt).chain(&self.covariates);
        for name in roles {
            if !seen.insert(name.as_str()) {
                return Err(CliError::Config(format!("column '{name}' is assigned more than once")));
            }
        }
        if let Some(c) = self.continuous.iter().find(|c| !self.covariates.contains(c)) {
            return Err(CliError::Config(format!("continuous column '{c}' is not listed as a covariate")));
        }
        Ok(())
    }
}

/// Source of the weights fed to the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMethod {
    #[default]
    Cfd,
    Ipw,
    Uniform,
}

impl fmt::Display for WeightMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightMethod::Cfd => "cfd",
            WeightMethod::Ipw => "ipw",
            WeightMethod::Uniform => "uniform",
        })
    }
}

impl FromStr for WeightMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cfd" => Ok(WeightMethod::Cfd),
            "ipw" => Ok(WeightMethod::Ipw),
            "uniform" => Ok(WeightMethod::Uniform),
            other => Err(format!("unknown weights '{other}' (expected cfd, ipw or uniform)")),
        }
    }
}

/// Everything needed to reproduce one run; echoed into every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub columns: ColumnSpec,
    pub weights: WeightMethod,
    pub density: DensitySpec,
    pub mode: BalanceMode,
    pub lambda: Lambda,
    pub estimand: Estimand,
    pub solver: QpSettings,
    pub inference: InferenceSettings,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    /// Settings for `simulate`.
    pub study: ScenarioConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            columns: ColumnSpec::default(),
            weights: WeightMethod::Cfd,
            density: DensitySpec::Gaussian { gamma: Bandwidth::Auto },
            mode: BalanceMode::ThreeWay,
            lambda: Lambda::Auto,
            estimand: Estimand::Ate,
            solver: QpSettings::default(),
            inference: InferenceSettings::default(),
            seed: 20240601,
            threads: None,
            out: None,
            study: ScenarioConfig::default(),
        }
    }
}

impl RunConfig {
    /// Read a JSON or TOML file, chosen by extension (TOML unless `.json`).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn balance(&self) -> BalanceConfig {
        BalanceConfig {
            mode: self.mode,
            lambda: self.lambda,
            density: self.density.clone(),
            solver: self.solver,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.columns.validate()?;
        if self.estimand == Estimand::Late && self.columns.receipt.is_none() {
            return Err(CliError::Config("the late estimand needs a receipt column".into()));
        }
        self.lambda.validate()?;
        self.solver.validate()?;
        if !(self.inference.alpha > 0.0 && self.inference.alpha < 1.0) {
            return Err(CliError::Config(format!("alpha must lie in (0, 1), got {}", self.inference.alpha)));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| CliError::Config("no input data file given".into()))
    }
}
