use std::io::Write;
use std::path::{Path, PathBuf};

use cfdbal::balance::{balance_weights, SolverReport, STABILITY_CONSTANT};
use cfdbal::cfd::CfdReport;
use cfdbal::estimators::{estimate, ipw_hajek_weights, Dataset, Estimate};
use cfdbal::inference::{derive_seed, intervals, CfdPipeline, EstimatorPipeline, Intervals, IpwPipeline, UniformPipeline};
use cfdbal::kernels::{gram, GramSource};
use cfdbal::sim::{run_study, ScenarioConfig, StudyResult, TableRow};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, WeightMethod};
use crate::error::{CliError, Result};
use crate::ingest::{ingest_csv, ColumnScaling, Ingested};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub path: PathBuf,
    pub n: usize,
    pub n1: usize,
    pub n0: usize,
    pub d: usize,
    pub covariates: Vec<String>,
    pub scaling: Vec<ColumnScaling>,
}

impl DataSummary {
    fn new(path: &Path, ing: &Ingested) -> Self {
        let d = &ing.dataset;
        Self {
            path: path.to_path_buf(),
            n: d.n(),
            n1: d.n1(),
            n0: d.n0(),
            d: d.d(),
            covariates: ing.covariates.clone(),
            scaling: ing.scaling.clone(),
        }
    }
}

/// Balance and solver details, present only for CFD weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceDiagnostics {
    pub before: CfdReport,
    pub after: CfdReport,
    pub objective_before: f64,
    pub objective_after: f64,
    pub lambda: f64,
    pub bandwidth: Option<f64>,
    pub solver: SolverReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub method: WeightMethod,
    pub ess1: f64,
    pub ess0: f64,
    pub max_weight: f64,
    /// Max weight above 5·n^(1/3).
    pub stability_flag: bool,
    pub balance: Option<BalanceDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsReport {
    pub version: String,
    pub config: RunConfig,
    pub data: DataSummary,
    pub diagnostics: WeightDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub version: String,
    pub config: RunConfig,
    pub data: DataSummary,
    pub estimate: Estimate,
    pub intervals: Intervals,
    pub diagnostics: WeightDiagnostics,
}

fn ess(w: &[f64], z: &[u8], group: u8) -> f64 {
    let (s, s2) = w.iter().zip(z).filter(|(_, &zi)| zi == group).fold((0.0, 0.0), |(s, s2), (v, _)| (s + v, s2 + v * v));
    s * s / s2
}

/// Weights for `data` under the configured method, with diagnostics.
pub fn compute_weights(config: &RunConfig, data: &Dataset) -> Result<(Vec<f64>, WeightDiagnostics)> {
    if config.weights == WeightMethod::Cfd {
        let bw = balance_weights(data.x(), data.z(), &config.balance())?;
        let diag = WeightDiagnostics {
            method: WeightMethod::Cfd,
            ess1: bw.ess1,
            ess0: bw.ess0,
            max_weight: bw.max_weight,
            stability_flag: bw.stability_flag,
            balance: Some(BalanceDiagnostics {
                before: bw.before,
                after: bw.after,
                objective_before: bw.objective_before,
                objective_after: bw.objective_after,
                lambda: bw.lambda,
                bandwidth: bw.bandwidth,
                solver: bw.solver,
            }),
        };
        return Ok((bw.w, diag));
    }
    let w = match config.weights {
        WeightMethod::Ipw => ipw_hajek_weights(data.x(), data.z())?,
        _ => vec![1.0; data.n()],
    };
    let max_weight = w.iter().cloned().fold(0.0, f64::max);
    let diag = WeightDiagnostics {
        method: config.weights,
        ess1: ess(&w, data.z(), 1),
        ess0: ess(&w, data.z(), 0),
        max_weight,
        stability_flag: max_weight > STABILITY_CONSTANT * (data.n() as f64).cbrt(),
        balance: None,
    };
    Ok((w, diag))
}

pub fn pipeline(config: &RunConfig) -> Box<dyn EstimatorPipeline> {
    match config.weights {
        WeightMethod::Cfd => Box::new(CfdPipeline::new(config.balance(), config.estimand)),
        WeightMethod::Ipw => Box::new(IpwPipeline { estimand: config.estimand }),
        WeightMethod::Uniform => Box::new(UniformPipeline { estimand: config.estimand }),
    }
}

fn load(config: &RunConfig) -> Result<(Ingested, DataSummary)> {
    config.validate()?;
    let path = config.data_path()?;
    let ing = ingest_csv(path, &config.columns)?;
    let summary = DataSummary::new(path, &ing);
    Ok((ing, summary))
}

pub fn run_weights(config: &RunConfig) -> Result<(Vec<f64>, WeightsReport)> {
    let (ing, data) = load(config)?;
    let (w, diagnostics) = compute_weights(config, &ing.dataset)?;
    Ok((w, WeightsReport { version: VERSION.into(), config: config.clone(), data, diagnostics }))
}

/// Ingest, weight, estimate and attach the requested intervals.
pub fn run_estimate(config: &RunConfig) -> Result<EstimateReport> {
    let (ing, data) = load(config)?;
    let d = &ing.dataset;
    let (w, diagnostics) = compute_weights(config, d)?;
    let est = estimate(d, &w, config.estimand)?;
    let p = pipeline(config);
    let intervals = intervals(d, p.as_ref(), est.value, &config.inference, derive_seed(config.seed, 1))?;
    Ok(EstimateReport { version: VERSION.into(), config: config.clone(), data, estimate: est, intervals, diagnostics })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCheck {
    pub version: String,
    pub config: RunConfig,
    pub data: DataSummary,
    pub density: String,
    pub bandwidth: Option<f64>,
    pub source: GramSource,
    pub symmetric: bool,
    pub diagonal_min: f64,
    pub diagonal_max: f64,
    pub offdiagonal_min: f64,
    pub offdiagonal_max: f64,
    pub offdiagonal_mean: f64,
    pub min_eigenvalue: f64,
    /// λmin ≥ −10⁻⁸·n; the energy kernel is only conditionally positive definite.
    pub psd: bool,
}

pub fn kernel_check(config: &RunConfig) -> Result<KernelCheck> {
    let (ing, data) = load(config)?;
    let x = ing.dataset.x();
    let (density, freq) = config.density.resolve(x, config.seed)?;
    let g = gram(&density, x, freq.as_ref())?;
    let n = g.n();
    let diag: Vec<f64> = g.k.diagonal().iter().cloned().collect();
    let mut off = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                off.push(g.k[(i, j)]);
            }
        }
    }
    let min_eigenvalue = g.min_eigenvalue();
    let fold = |v: &[f64], f: fn(f64, f64) -> f64, init| v.iter().cloned().fold(init, f);
    Ok(KernelCheck {
        version: VERSION.into(),
        config: config.clone(),
        data,
        density: config.density.to_string(),
        bandwidth: density.bandwidth(),
        source: g.source,
        symmetric: g.k == g.k.transpose(),
        diagonal_min: fold(&diag, f64::min, f64::INFINITY),
        diagonal_max: fold(&diag, f64::max, f64::NEG_INFINITY),
        offdiagonal_min: fold(&off, f64::min, f64::INFINITY),
        offdiagonal_max: fold(&off, f64::max, f64::NEG_INFINITY),
        offdiagonal_mean: if off.is_empty() { 0.0 } else { off.iter().sum::<f64>() / off.len() as f64 },
        min_eigenvalue,
        psd: min_eigenvalue >= -1e-8 * n as f64,
    })
}

/// One study per sample size in `sizes` (or `config.n` when empty).
pub fn run_simulation(config: &ScenarioConfig, sizes: &[usize]) -> Result<Vec<StudyResult>> {
    let sizes = if sizes.is_empty() { vec![config.n] } else { sizes.to_vec() };
    sizes
        .into_iter()
        .map(|n| {
            log::info!("simulating n = {n}, {} replications", config.reps);
            Ok(run_study(&ScenarioConfig { n, ..config.clone() })?)
        })
        .collect()
}

/// The summary table of `studies` as CSV, bias and ESE multiplied by 100.
pub fn write_table<W: Write>(studies: &[StudyResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in studies {
        for row in &s.rows {
            w.serialize(TableRow::from(row)).map_err(|e| CliError::Csv(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| CliError::Csv(e.to_string()))
}

pub fn write_weights<W: Write>(w: &[f64], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["row_id", "weight"]).map_err(|e| CliError::Csv(e.to_string()))?;
    for (i, v) in w.iter().enumerate() {
        wr.write_record([(i + 1).to_string(), v.to_string()]).map_err(|e| CliError::Csv(e.to_string()))?;
    }
    wr.flush().map_err(|e| CliError::Csv(e.to_string()))
}
