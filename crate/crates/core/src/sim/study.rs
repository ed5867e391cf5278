use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::dgp::{generate_dataset, oracle_late, DgpParams, OracleLate, Propensity};
use crate::balance::{BalanceConfig, BalanceMode, Lambda};
use crate::error::{Error, Result};
use crate::estimators::Estimand;
use crate::inference::{derive_seed, intervals, CfdPipeline, EstimatorPipeline, InferenceSettings, IpwPipeline};
use crate::kernels::DensitySpec;
use crate::qp::QpSettings;

/// Largest tolerated fraction of failed replications per method.
pub const MAX_FAILURE_RATE: f64 = 0.05;
pub const DEFAULT_ORACLE_DRAWS: usize = 10_000_000;

/// An estimator in the study: CFD weights under a density, or the IPW baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Cfd(DensitySpec),
    Ipw,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Cfd(d) => write!(f, "{d}"),
            Method::Ipw => f.write_str("ipw"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("ipw") {
            Ok(Method::Ipw)
        } else {
            Ok(Method::Cfd(s.parse()?))
        }
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub propensity: Propensity,
    pub n: usize,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub estimand: Estimand,
    pub mode: BalanceMode,
    pub lambda: Lambda,
    pub solver: QpSettings,
    pub inference: InferenceSettings,
    pub seed: u64,
    pub oracle_draws: usize,
    pub params: DgpParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            propensity: Propensity::Nonlinear,
            n: 400,
            reps: 200,
            methods: vec![
                Method::Cfd(DensitySpec::Gaussian { gamma: crate::kernels::Bandwidth::Auto }),
                Method::Cfd(DensitySpec::Energy),
                Method::Ipw,
            ],
            estimand: Estimand::Late,
            mode: BalanceMode::ThreeWay,
            lambda: Lambda::Auto,
            solver: QpSettings::default(),
            inference: InferenceSettings::study(),
            seed: 20240601,
            oracle_draws: DEFAULT_ORACLE_DRAWS,
            params: DgpParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 20 {
            return Err(Error::Parameter(format!("study sample size must be at least 20, got {}", self.n)));
        }
        if self.reps < 1 {
            return Err(Error::Parameter("study needs at least one replication".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Parameter("study needs at least one method".into()));
        }
        self.lambda.validate()?;
        self.solver.validate()
    }

    pub fn pipeline(&self, method: &Method) -> Box<dyn EstimatorPipeline> {
        match method {
            Method::Cfd(density) => Box::new(CfdPipeline::new(
                BalanceConfig {
                    mode: self.mode,
                    lambda: self.lambda,
                    density: density.clone(),
                    solver: self.solver.clone(),
                    seed: 0,
                },
                self.estimand,
            )),
            Method::Ipw => Box::new(IpwPipeline { estimand: self.estimand }),
        }
    }
}

/// One method on one simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub rep: usize,
    pub method: String,
    pub estimate: Option<f64>,
    pub ci_subsampling: Option<(f64, f64)>,
    pub ci_bootstrap: Option<(f64, f64)>,
    pub subsample_size: Option<usize>,
    pub error: Option<String>,
}

/// Summary of one method over the replications that succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub method: String,
    pub n: usize,
    pub bias: f64,
    /// Standard deviation of the estimates; absent with a single replication.
    pub ese: Option<f64>,
    pub coverage_ss: Option<f64>,
    pub coverage_boot: Option<f64>,
    pub length_ss: Option<f64>,
    pub length_boot: Option<f64>,
    pub replications: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: ScenarioConfig,
    pub oracle: OracleLate,
    pub rows: Vec<SimRow>,
    pub replications: Vec<Replication>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Bias, ESE, coverage and length for one method's replications.
pub fn summarize(method: &str, n: usize, truth: f64, records: &[&Replication]) -> Result<SimRow> {
    let ok: Vec<&Replication> = records.iter().copied().filter(|r| r.estimate.is_some()).collect();
    let failures = records.len() - ok.len();
    if failures as f64 > MAX_FAILURE_RATE * records.len() as f64 {
        return Err(Error::Study(format!(
            "{method}: {failures} of {} replications failed (limit {:.0}%)",
            records.len(),
            100.0 * MAX_FAILURE_RATE
        )));
    }
    if failures > 0 {
        log::warn!("{method}: {failures} failed replications excluded");
    }
    let est: Vec<f64> = ok.iter().map(|r| r.estimate.unwrap()).collect();
    let m = mean(&est).ok_or_else(|| Error::Study(format!("{method}: no successful replications")))?;
    let ese = if est.len() >= 2 {
        Some((est.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (est.len() - 1) as f64).sqrt())
    } else {
        log::warn!("{method}: ESE is undefined with a single replication");
        None
    };
    let cover = |f: fn(&Replication) -> Option<(f64, f64)>| {
        let cis: Vec<(f64, f64)> = ok.iter().filter_map(|r| f(r)).collect();
        let hits: Vec<f64> = cis.iter().map(|c| (c.0 <= truth && truth <= c.1) as u8 as f64).collect();
        let lens: Vec<f64> = cis.iter().map(|c| c.1 - c.0).collect();
        (mean(&hits), mean(&lens))
    };
    let (coverage_ss, length_ss) = cover(|r| r.ci_subsampling);
    let (coverage_boot, length_boot) = cover(|r| r.ci_bootstrap);
    Ok(SimRow {
        method: method.to_string(),
        n,
        bias: m - truth,
        ese,
        coverage_ss,
        coverage_boot,
        length_ss,
        length_boot,
        replications: ok.len(),
        failures,
    })
}

/// Run the configured methods on `config.reps` simulated data sets.
pub fn run_study(config: &ScenarioConfig) -> Result<StudyResult> {
    config.validate()?;
    let oracle = oracle_late(&config.params, config.oracle_draws, derive_seed(config.seed, u64::MAX))?;
    log::info!("oracle LATE {:.5} (se {:.2e}, complier fraction {:.4})", oracle.value, oracle.se, oracle.complier_fraction);
    let pipelines: Vec<(String, Box<dyn EstimatorPipeline>)> =
        config.methods.iter().map(|m| (m.to_string(), config.pipeline(m))).collect();
    run_study_with(config, &pipelines, oracle)
}

/// As [`run_study`] with caller-supplied pipelines and oracle.
pub fn run_study_with(
    config: &ScenarioConfig,
    pipelines: &[(String, Box<dyn EstimatorPipeline>)],
    oracle: OracleLate,
) -> Result<StudyResult> {
    config.validate()?;
    let records: Vec<Vec<Replication>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(config.seed, rep as u64);
            let data = generate_dataset(config.propensity, &config.params, config.n, seed);
            let out: Vec<Replication> = pipelines
                .iter()
                .enumerate()
                .map(|(m, (label, pipeline))| {
                    let mut rec = Replication {
                        rep,
                        method: label.clone(),
                        estimate: None,
                        ci_subsampling: None,
                        ci_bootstrap: None,
                        subsample_size: None,
                        error: None,
                    };
                    let pseed = derive_seed(seed, m as u64 + 1);
                    let run = data.as_ref().map_err(Clone::clone).and_then(|(d, _)| {
                        let point = pipeline.estimate(d, pseed)?;
                        let ci = intervals(d, pipeline.as_ref(), point, &config.inference, pseed)?;
                        Ok((point, ci))
                    });
                    match run {
                        Ok((point, ci)) => {
                            rec.estimate = Some(point);
                            rec.subsample_size = ci.subsampling.as_ref().map(|c| c.size);
                            rec.ci_subsampling = ci.subsampling.map(|c| (c.lower, c.upper));
                            rec.ci_bootstrap = ci.bootstrap.map(|c| (c.lower, c.upper));
                        }
                        Err(e) => {
                            log::warn!("replication {rep}, {label}: {e}");
                            rec.error = Some(e.to_string());
                        }
                    }
                    rec
                })
                .collect();
            log::debug!("replication {rep} done");
            out
        })
        .collect();
    let replications: Vec<Replication> = records.into_iter().flatten().collect();
    let rows = pipelines
        .iter()
        .map(|(label, _)| {
            let mine: Vec<&Replication> = replications.iter().filter(|r| &r.method == label).collect();
            summarize(label, config.n, oracle.value, &mine)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyResult { config: config.clone(), oracle, rows, replications })
}

/// Table layout with bias and ESE multiplied by 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub n: usize,
    pub bias_x100: f64,
    pub ese_x100: Option<f64>,
    pub coverage_ss: Option<f64>,
    pub coverage_boot: Option<f64>,
    pub length_ss: Option<f64>,
    pub length_boot: Option<f64>,
    pub replications: usize,
    pub failures: usize,
}

impl From<&SimRow> for TableRow {
    fn from(r: &SimRow) -> Self {
        Self {
            method: r.method.clone(),
            n: r.n,
            bias_x100: 100.0 * r.bias,
            ese_x100: r.ese.map(|v| 100.0 * v),
            coverage_ss: r.coverage_ss,
            coverage_boot: r.coverage_boot,
            length_ss: r.length_ss,
            length_boot: r.length_boot,
            replications: r.replications,
            failures: r.failures,
        }
    }
}
