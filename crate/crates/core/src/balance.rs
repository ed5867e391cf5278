//! CFD balancing weights.
//!
//! With a₁ = D₁w/n₁, a₀ = D₀w/n₀ and u = 1/n, the three-way program minimizes
//! ½[CFD²(a₁, u) + CFD²(a₀, u) + CFD²(a₁, a₀)] + λ²‖w‖² and the two-way
//! program CFD²(a₁, u) + CFD²(a₀, u) + λ²‖w‖², both over nonnegative weights
//! summing to the group sizes. Up to constants these are the quadratic
//! programs built by [`assemble_qp`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cfd::{cfd_report, CfdReport, GroupSpec};
use crate::error::{Error, Result};
use crate::kernels::{gram, Bandwidth, DensitySpec, GramMatrix};
use crate::qp::{solve_qp_warm, QpProblem, QpSettings, QpSolution, QpStatus};

/// Constant C in the ‖w‖∞ ≤ C·n^(1/3) stability diagnostic.
pub const STABILITY_CONSTANT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMode {
    TwoWay,
    #[default]
    ThreeWay,
}

impl fmt::Display for BalanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BalanceMode::TwoWay => "two_way",
            BalanceMode::ThreeWay => "three_way",
        })
    }
}

impl FromStr for BalanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "two_way" | "two" | "2" => Ok(BalanceMode::TwoWay),
            "three_way" | "three" | "3" => Ok(BalanceMode::ThreeWay),
            other => Err(Error::Parse(format!("unknown balancing mode '{other}'"))),
        }
    }
}

/// Ridge parameter policy: `Auto` means λ = n⁻².
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Lambda {
    #[default]
    Auto,
    Fixed(f64),
}

impl Lambda {
    pub fn value(&self, n: usize) -> f64 {
        match self {
            Lambda::Auto => 1.0 / (n as f64 * n as f64),
            Lambda::Fixed(v) => *v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Lambda::Fixed(v) if !(v.is_finite() && *v >= 0.0) => {
                Err(Error::Parameter(format!("lambda must be finite and nonnegative, got {v}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lambda::Auto => f.write_str("auto"),
            Lambda::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Lambda {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Lambda::Auto);
        }
        let v: f64 = s.parse().map_err(|_| Error::Parse(format!("lambda: expected 'auto' or a number, got '{s}'")))?;
        let l = Lambda::Fixed(v);
        l.validate().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(l)
    }
}

impl Serialize for Lambda {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Lambda::Auto => serializer.serialize_str("auto"),
            Lambda::Fixed(v) => serializer.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Lambda {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(v) => {
                let l = Lambda::Fixed(v);
                l.validate().map_err(serde::de::Error::custom)?;
                Ok(l)
            }
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalanceConfig {
    pub mode: BalanceMode,
    pub lambda: Lambda,
    pub density: DensitySpec,
    pub solver: QpSettings,
    /// Seed for random-feature frequencies.
    pub seed: u64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            mode: BalanceMode::ThreeWay,
            lambda: Lambda::Auto,
            density: DensitySpec::Gaussian { gamma: Bandwidth::Auto },
            solver: QpSettings::default(),
            seed: 0,
        }
    }
}

/// Solver outcome carried into every downstream output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub polished: bool,
}

impl From<&QpSolution> for SolverReport {
    fn from(s: &QpSolution) -> Self {
        Self {
            status: s.status,
            iterations: s.iterations,
            primal_residual: s.primal_residual,
            dual_residual: s.dual_residual,
            polished: s.polished,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceWeights {
    pub w: Vec<f64>,
    /// Discrepancies at uniform weights.
    pub before: CfdReport,
    pub after: CfdReport,
    /// QP objective wᵀQw + qᵀw at uniform and at solved weights.
    pub objective_before: f64,
    pub objective_after: f64,
    pub ess1: f64,
    pub ess0: f64,
    pub max_weight: f64,
    pub stability_flag: bool,
    pub lambda: f64,
    pub bandwidth: Option<f64>,
    pub solver: SolverReport,
}

fn check_counts(groups: &GroupSpec, counts: Option<&[usize]>) -> Result<(Vec<f64>, f64, f64)> {
    let n = groups.n();
    let c: Vec<f64> = match counts {
        None => vec![1.0; n],
        Some(c) => {
            if c.len() != n {
                return Err(Error::Shape(format!("{} multiplicities for {n} rows", c.len())));
            }
            if c.contains(&0) {
                return Err(Error::Parameter("multiplicities must be positive".into()));
            }
            c.iter().map(|&v| v as f64).collect()
        }
    };
    let n1: f64 = (0..n).filter(|&i| groups.is_treated(i)).map(|i| c[i]).sum();
    let n0: f64 = (0..n).filter(|&i| !groups.is_treated(i)).map(|i| c[i]).sum();
    Ok((c, n1, n0))
}

/// Build the balancing QP over the rows of `k`.
pub fn assemble_qp(k: &GramMatrix, groups: &GroupSpec, mode: BalanceMode, lambda: f64) -> Result<QpProblem> {
    assemble_qp_counts(&k.k, groups, None, mode, lambda)
}

/// Balancing QP for a sample in which row i appears `counts[i]` times.
///
/// The variables are the total weights Wᵢ of each distinct row. Because the
/// ridge term is minimized by splitting Wᵢ evenly among the copies, the
/// collapsed program has the ridge λ²Wᵢ²/cᵢ and is otherwise the full program
/// with duplicated kernel rows merged; its minimizer spread evenly over the
/// copies is the minimizer of the full program.
pub fn assemble_qp_counts(
    k: &DMatrix<f64>,
    groups: &GroupSpec,
    counts: Option<&[usize]>,
    mode: BalanceMode,
    lambda: f64,
) -> Result<QpProblem> {
    let n = groups.n();
    if k.shape() != (n, n) {
        return Err(Error::Shape(format!("gram is {:?} but there are {n} rows", k.shape())));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Parameter(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let (c, n1, n0) = check_counts(groups, counts)?;
    let total = n1 + n0;
    // s_i = 1/n₁ for treated rows and 1/n₀ for controls; the quadratic form
    // is sᵢsⱼKᵢⱼ within groups and −sᵢsⱼKᵢⱼ/2 across them (three-way only).
    let s: Vec<f64> = (0..n).map(|i| if groups.is_treated(i) { 1.0 / n1 } else { 1.0 / n0 }).collect();
    let cross = match mode {
        BalanceMode::ThreeWay => -0.5,
        BalanceMode::TwoWay => 0.0,
    };
    let mut quad = DMatrix::from_fn(n, n, |i, j| {
        let same = groups.is_treated(i) == groups.is_treated(j);
        s[i] * s[j] * k[(i, j)] * if same { 1.0 } else { cross }
    });
    let ridge = lambda * lambda;
    for i in 0..n {
        quad[(i, i)] += ridge / c[i];
    }
    let kc = k * DVector::from_column_slice(&c);
    let lin_factor = match mode {
        BalanceMode::ThreeWay => 1.0,
        BalanceMode::TwoWay => 2.0,
    };
    let lin = DVector::from_fn(n, |i, _| -lin_factor * s[i] * kc[i] / total);
    let a = DMatrix::from_fn(2, n, |r, i| if groups.is_treated(i) == (r == 0) { 1.0 } else { 0.0 });
    let b = DVector::from_row_slice(&[n1, n0]);
    QpProblem::new(quad, lin, a, b)
}

/// The balancing objective at w expressed through the CFD terms at w:
/// ½(cfd1_fn + cfd0_fn + cfd1_0) − c for three-way and cfd1_fn + cfd0_fn − 2c
/// for two-way, where c = 1ᵀK1/n². Adding λ²‖w‖² gives `QpProblem::objective`.
pub fn objective_from_report(mode: BalanceMode, report: &CfdReport) -> f64 {
    match mode {
        BalanceMode::ThreeWay => 0.5 * report.total - report.constant,
        BalanceMode::TwoWay => report.cfd1_fn + report.cfd0_fn - 2.0 * report.constant,
    }
}

/// Clamp negative round-off to zero and rescale each group to sum to its size.
pub(crate) fn finalize_weights(w: &[f64], groups: &GroupSpec, counts: &[f64]) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = w.to_vec();
    for v in out.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-8 {
                log::warn!("solver returned weight {v:e} below -1e-8; clamped to 0");
            }
            *v = 0.0;
        }
    }
    let (mut s1, mut s0, mut n1, mut n0) = (0.0, 0.0, 0.0, 0.0);
    for (i, v) in out.iter().enumerate() {
        if groups.is_treated(i) {
            s1 += v;
            n1 += counts[i];
        } else {
            s0 += v;
            n0 += counts[i];
        }
    }
    if !(s1 > 0.0 && s0 > 0.0) {
        return Err(Error::InvalidWeights("a group received zero total weight".into()));
    }
    for (i, v) in out.iter_mut().enumerate() {
        *v *= if groups.is_treated(i) { n1 / s1 } else { n0 / s0 };
    }
    Ok(out)
}

/// Solve the balancing program on a precomputed gram (optionally collapsed by
/// multiplicities) and return normalized total weights per row.
pub fn solve_balance(
    k: &DMatrix<f64>,
    groups: &GroupSpec,
    counts: Option<&[usize]>,
    mode: BalanceMode,
    lambda: f64,
    settings: &QpSettings,
    warm: Option<&[f64]>,
) -> Result<(Vec<f64>, QpSolution)> {
    let problem = assemble_qp_counts(k, groups, counts, mode, lambda)?;
    let (c, _, _) = check_counts(groups, counts)?;
    let start = match warm {
        Some(w) => DVector::from_column_slice(w),
        None => DVector::from_column_slice(&c),
    };
    let sol = solve_qp_warm(&problem, settings, Some(&start))?;
    match sol.status {
        QpStatus::Infeasible => {
            log::error!("balancing QP reported infeasible; this indicates an internal error");
            return Err(Error::Infeasible);
        }
        QpStatus::MaxIter => log::warn!(
            "balancing QP stopped at max_iter = {} (primal {:.2e}, dual {:.2e})",
            sol.iterations,
            sol.primal_residual,
            sol.dual_residual
        ),
        QpStatus::Solved => {}
    }
    let w = finalize_weights(&sol.w, groups, &c)?;
    Ok((w, sol))
}

fn ess(w: &[f64], groups: &GroupSpec, treated: bool) -> f64 {
    let (s, s2) = w
        .iter()
        .enumerate()
        .filter(|(i, _)| groups.is_treated(*i) == treated)
        .fold((0.0, 0.0), |(s, s2), (_, v)| (s + v, s2 + v * v));
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Balancing weights for covariates `x` and group indicators `z`.
pub fn balance_weights(x: &DMatrix<f64>, z: &[u8], config: &BalanceConfig) -> Result<BalanceWeights> {
    config.lambda.validate()?;
    let groups = GroupSpec::new(z)?;
    let n = groups.n();
    if x.nrows() != n {
        return Err(Error::Shape(format!("{} covariate rows for {n} group indicators", x.nrows())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariates"));
    }
    let k = balance_gram(x, &config.density, None, config.seed)?;
    let lambda = config.lambda.value(n);
    let (w, sol) = solve_balance(&k.k, &groups, None, config.mode, lambda, &config.solver, None)?;
    let problem = assemble_qp(&k, &groups, config.mode, lambda)?;
    let ones = vec![1.0; n];
    let before = cfd_report(&k, &groups, &ones)?;
    let after = cfd_report(&k, &groups, &w)?;
    let max_weight = w.iter().cloned().fold(0.0, f64::max);
    Ok(BalanceWeights {
        objective_before: problem.objective(&DVector::from_column_slice(&ones)),
        objective_after: problem.objective(&DVector::from_column_slice(&w)),
        before,
        after,
        ess1: ess(&w, &groups, true),
        ess0: ess(&w, &groups, false),
        max_weight,
        stability_flag: max_weight > STABILITY_CONSTANT * (n as f64).cbrt(),
        lambda,
        bandwidth: k.density.bandwidth(),
        solver: SolverReport::from(&sol),
        w,
    })
}

/// Gram matrix for balancing: resolves `auto` bandwidths (on the multiset
/// described by `counts` when given) and treats all-identical covariates,
/// where every translation-invariant kernel is constant, with a unit bandwidth.
pub fn balance_gram(
    x: &DMatrix<f64>,
    density: &DensitySpec,
    counts: Option<&[usize]>,
    seed: u64,
) -> Result<GramMatrix> {
    let (dens, freq) = match density.resolve_counts(x, counts, seed) {
        Err(Error::DegenerateBandwidth) => {
            log::warn!("all covariate rows are identical; the gram is constant and weights are set by the ridge term");
            with_unit_bandwidth(density).resolve(x, seed)?
        }
        other => other?,
    };
    gram(&dens, x, freq.as_ref())
}

fn with_unit_bandwidth(spec: &DensitySpec) -> DensitySpec {
    let one = Bandwidth::Fixed(1.0);
    match spec.clone() {
        DensitySpec::Gaussian { .. } => DensitySpec::Gaussian { gamma: one },
        DensitySpec::Laplacian { .. } => DensitySpec::Laplacian { gamma: one },
        DensitySpec::Student { s, features, .. } => DensitySpec::Student { s, features, gamma: one },
        DensitySpec::Matern { smoothness, .. } => DensitySpec::Matern { smoothness, gamma: one },
        DensitySpec::Energy => DensitySpec::Energy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{GramSource, SpectralDensity};

    fn identity_gram(n: usize) -> GramMatrix {
        GramMatrix {
            k: DMatrix::identity(n, n),
            source: GramSource::ClosedForm,
            density: SpectralDensity::gaussian(1.0, 1).unwrap(),
        }
    }

    #[test]
    fn two_unit_three_way_by_substitution() {
        // n₁ = n₀ = 1, n = 2, K = I: Q = diag(1, 1) (cross term uses K₁₂ = 0),
        // q = −(K1)ᵢ/(1·2) = (−½, −½).
        let g = GroupSpec::new(&[1, 0]).unwrap();
        let p = assemble_qp(&identity_gram(2), &g, BalanceMode::ThreeWay, 0.0).unwrap();
        assert_eq!(p.quad(), &DMatrix::identity(2, 2));
        assert_eq!(p.lin().as_slice(), &[-0.5, -0.5]);
        assert_eq!(p.b().as_slice(), &[1.0, 0.0 + 1.0]);
        let p2 = assemble_qp(&identity_gram(2), &g, BalanceMode::TwoWay, 0.0).unwrap();
        assert_eq!(p2.lin().as_slice(), &[-1.0, -1.0]);
    }

    #[test]
    fn ridge_enters_diagonal() {
        let g = GroupSpec::new(&[1, 0, 0]).unwrap();
        let p = assemble_qp(&identity_gram(3), &g, BalanceMode::TwoWay, 0.1).unwrap();
        assert!((p.quad()[(0, 0)] - (1.0 + 0.01)).abs() < 1e-15);
        assert!((p.quad()[(1, 1)] - (0.25 + 0.01)).abs() < 1e-15);
    }

    #[test]
    fn lambda_parsing() {
        assert_eq!("auto".parse::<Lambda>().unwrap(), Lambda::Auto);
        assert_eq!("0.01".parse::<Lambda>().unwrap(), Lambda::Fixed(0.01));
        assert!("-1".parse::<Lambda>().is_err());
        assert_eq!(Lambda::Auto.value(20), 1.0 / 400.0);
        let json = serde_json::to_string(&Lambda::Fixed(0.5)).unwrap();
        assert_eq!(serde_json::from_str::<Lambda>(&json).unwrap(), Lambda::Fixed(0.5));
        assert_eq!(serde_json::from_str::<Lambda>("\"auto\"").unwrap(), Lambda::Auto);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("two_way".parse::<BalanceMode>().unwrap(), BalanceMode::TwoWay);
        assert_eq!("three-way".parse::<BalanceMode>().unwrap(), BalanceMode::ThreeWay);
        assert!("four_way".parse::<BalanceMode>().is_err());
    }

    #[test]
    fn finalize_clamps_and_renormalizes() {
        let g = GroupSpec::new(&[1, 1, 0, 0]).unwrap();
        let w = finalize_weights(&[-5e-9, 2.0, 1.0, 3.0], &g, &[1.0; 4]).unwrap();
        assert_eq!(w[0], 0.0);
        assert!((w[1] - 2.0).abs() < 1e-15);
        assert!((w[2] + w[3] - 2.0).abs() < 1e-15);
    }
}
