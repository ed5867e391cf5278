//! Weighting estimators of the ATE and LATE, and the logistic-propensity
//! (IPW/Hájek) baseline.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cfd::GroupSpec;
use crate::error::{Error, Result};

/// Relative tolerance on Σ_{z=g} wᵢ = n_g accepted by the estimators.
pub const GROUP_SUM_TOL: f64 = 1e-4;
/// |denominator| at or below this is a weak instrument.
pub const WEAK_INSTRUMENT: f64 = 1e-6;
pub const PROPENSITY_CLIP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    z: Vec<u8>,
    a: Option<Vec<u8>>,
    x: DMatrix<f64>,
    groups: GroupSpec,
}

fn check_binary(v: &[u8], what: &str) -> Result<()> {
    match v.iter().position(|b| *b > 1) {
        Some(i) => Err(Error::Parameter(format!("{what} must be 0 or 1 (row {i} has {})", v[i]))),
        None => Ok(()),
    }
}

impl Dataset {
    pub fn new(y: Vec<f64>, z: Vec<u8>, a: Option<Vec<u8>>, x: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if z.len() != n || x.nrows() != n || a.as_ref().is_some_and(|a| a.len() != n) {
            return Err(Error::Shape(format!(
                "y has {n} rows, z {}, x {}, a {}",
                z.len(),
                x.nrows(),
                a.as_ref().map_or("absent".to_string(), |a| a.len().to_string())
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("outcome"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariates"));
        }
        check_binary(&z, "z")?;
        if let Some(a) = &a {
            check_binary(a, "a")?;
        }
        let groups = GroupSpec::new(&z)?;
        Ok(Self { y, z, a, x, groups })
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> &[u8] {
        &self.z
    }

    pub fn a(&self) -> Option<&[u8]> {
        self.a.as_deref()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn groups(&self) -> &GroupSpec {
        &self.groups
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n1(&self) -> usize {
        self.groups.n1()
    }

    pub fn n0(&self) -> usize {
        self.groups.n0()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `idx` in order (duplicates allowed).
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let x = DMatrix::from_fn(idx.len(), self.d(), |r, c| self.x[(idx[r], c)]);
        Dataset::new(
            idx.iter().map(|&i| self.y[i]).collect(),
            idx.iter().map(|&i| self.z[i]).collect(),
            self.a.as_ref().map(|a| idx.iter().map(|&i| a[i]).collect()),
            x,
        )
    }

    /// Same rows with the outcome replaced.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        Dataset::new(y, self.z.clone(), self.a.clone(), self.x.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    #[default]
    Ate,
    Late,
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimand::Ate => "ate",
            Estimand::Late => "late",
        })
    }
}

impl FromStr for Estimand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ate" => Ok(Estimand::Ate),
            "late" => Ok(Estimand::Late),
            other => Err(Error::Parse(format!("unknown estimand '{other}' (expected ate or late)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub estimand: Estimand,
    /// Weighted contrast in treatment receipt (LATE only).
    pub denominator: Option<f64>,
}

fn check_weights(groups: &GroupSpec, w: &[f64]) -> Result<()> {
    if w.len() != groups.n() {
        return Err(Error::InvalidWeights(format!("{} weights for {} rows", w.len(), groups.n())));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
    }
    let (s1, s0) = groups.group_sums(w);
    let (n1, n0) = (groups.n1() as f64, groups.n0() as f64);
    if (s1 - n1).abs() > GROUP_SUM_TOL * n1 || (s0 - n0).abs() > GROUP_SUM_TOL * n0 {
        return Err(Error::InvalidWeights(format!(
            "group sums ({s1}, {s0}) differ from group sizes ({n1}, {n0})"
        )));
    }
    Ok(())
}

/// Σ wᵢzᵢvᵢ / Σ wᵢzᵢ − Σ wᵢ(1−zᵢ)vᵢ / Σ wᵢ(1−zᵢ).
///
/// Feasible weights have group sums n₁ and n₀, so this is the usual
/// (1/n₁)Σ wᵢzᵢvᵢ − (1/n₀)Σ wᵢ(1−zᵢ)vᵢ; dividing by the realized sums keeps
/// the contrast of v = z at exactly 1 despite solver-level residuals.
pub(crate) fn contrast(v: impl Fn(usize) -> f64, z: &[u8], w: &[f64]) -> f64 {
    let (mut t, mut c, mut s1, mut s0) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..z.len() {
        if z[i] == 1 {
            t += w[i] * v(i);
            s1 += w[i];
        } else {
            c += w[i] * v(i);
            s0 += w[i];
        }
    }
    t / s1 - c / s0
}

/// Weighted difference in mean outcomes between the z = 1 and z = 0 groups.
pub fn ate_weighted(data: &Dataset, w: &[f64]) -> Result<Estimate> {
    check_weights(&data.groups, w)?;
    let value = contrast(|i| data.y[i], &data.z, w);
    Ok(Estimate { value, estimand: Estimand::Ate, denominator: None })
}

/// Wald ratio of weighted contrasts in outcome and in treatment receipt.
pub fn late_weighted(data: &Dataset, w: &[f64]) -> Result<Estimate> {
    check_weights(&data.groups, w)?;
    let a = data
        .a
        .as_ref()
        .ok_or_else(|| Error::Parameter("LATE requires the treatment-receipt column".into()))?;
    let num = contrast(|i| data.y[i], &data.z, w);
    let den = contrast(|i| a[i] as f64, &data.z, w);
    wald(num, den)
}

pub(crate) fn wald(num: f64, den: f64) -> Result<Estimate> {
    if den.abs() <= WEAK_INSTRUMENT {
        return Err(Error::WeakInstrument { denominator: den });
    }
    Ok(Estimate { value: num / den, estimand: Estimand::Late, denominator: Some(den) })
}

pub fn estimate(data: &Dataset, w: &[f64], estimand: Estimand) -> Result<Estimate> {
    match estimand {
        Estimand::Ate => ate_weighted(data, w),
        Estimand::Late => late_weighted(data, w),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    /// Intercept followed by one slope per covariate column.
    pub coef: Vec<f64>,
    /// Constant columns, excluded from the fit (slope reported as 0).
    pub dropped: Vec<usize>,
    pub iterations: usize,
    /// Ridge penalty actually used (0 unless the separation retry fired).
    pub ridge: f64,
}

impl LogisticFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                let eta = self.coef[0] + (0..x.ncols()).map(|j| self.coef[j + 1] * x[(i, j)]).sum::<f64>();
                expit(eta)
            })
            .collect()
    }
}

pub fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub const LOGISTIC_TOL: f64 = 1e-8;
pub const LOGISTIC_MAX_ITER: usize = 100;
const SEPARATION_NORM: f64 = 1e3;
const SEPARATION_RIDGE: f64 = 1e-6;

/// Maximum-likelihood logistic regression of z on [1, X] by iteratively
/// reweighted least squares. On divergence (coefficient norm above 10³) the
/// fit is retried once with a 10⁻⁶ ridge on the slopes.
pub fn fit_logistic(x: &DMatrix<f64>, z: &[u8], max_iter: usize, tol: f64) -> Result<LogisticFit> {
    let (n, d) = x.shape();
    if z.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", z.len())));
    }
    check_binary(z, "z")?;
    if n <= d + 1 {
        return Err(Error::InsufficientData(format!("logistic regression needs n > d + 1, got n = {n}, d = {d}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariates"));
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..d {
        let col = x.column(j);
        if col.iter().all(|v| *v == col[0]) {
            dropped.push(j);
        } else {
            kept.push(j);
        }
    }
    let design = DMatrix::from_fn(n, kept.len() + 1, |i, c| if c == 0 { 1.0 } else { x[(i, kept[c - 1])] });
    let target = DVector::from_fn(n, |i, _| z[i] as f64);
    let (beta, iterations, ridge) = match irls(&design, &target, max_iter, tol, 0.0) {
        Ok((beta, it)) => (beta, it, 0.0),
        Err(Error::Separation { norm }) => {
            log::warn!("logistic regression diverged (coefficient norm {norm:.3e}); retrying with ridge {SEPARATION_RIDGE}");
            let (beta, it) = irls(&design, &target, max_iter, tol, SEPARATION_RIDGE).map_err(|e| match e {
                Error::NoConvergence(_) => Error::Separation { norm },
                other => other,
            })?;
            (beta, it, SEPARATION_RIDGE)
        }
        Err(e) => return Err(e),
    };
    let mut coef = vec![0.0; d + 1];
    coef[0] = beta[0];
    for (c, &j) in kept.iter().enumerate() {
        coef[j + 1] = beta[c + 1];
    }
    Ok(LogisticFit { coef, dropped, iterations, ridge })
}

fn irls(x: &DMatrix<f64>, z: &DVector<f64>, max_iter: usize, tol: f64, ridge: f64) -> Result<(DVector<f64>, usize)> {
    let (n, p) = x.shape();
    let mut beta = DVector::zeros(p);
    for it in 1..=max_iter {
        let eta = x * &beta;
        let mu = eta.map(expit);
        let wts = mu.map(|m| (m * (1.0 - m)).max(1e-12));
        let mut grad = x.tr_mul(&(z - &mu));
        let mut xw = x.clone();
        for i in 0..n {
            xw.row_mut(i).scale_mut(wts[i]);
        }
        let mut hess = x.tr_mul(&xw);
        for j in 1..p {
            hess[(j, j)] += ridge;
            grad[j] -= ridge * beta[j];
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => hess.lu().solve(&grad).ok_or(Error::NoConvergence(it))?,
        };
        beta += &step;
        let norm = beta.norm();
        if !norm.is_finite() || (ridge == 0.0 && norm > SEPARATION_NORM) {
            return Err(Error::Separation { norm });
        }
        if step.amax() <= tol {
            return Ok((beta, it));
        }
        // A vanishing deviance means the classes are separated and the
        // coefficients are drifting off to infinity, just slowly.
        if ridge == 0.0 && deviance(x, z, &beta) < 1e-8 * n as f64 {
            return Err(Error::Separation { norm });
        }
    }
    Err(Error::NoConvergence(max_iter))
}

fn deviance(x: &DMatrix<f64>, z: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    // −2 log-likelihood with log(1 + e^t) evaluated stably.
    let softplus = |t: f64| t.max(0.0) + (-t.abs()).exp().ln_1p();
    2.0 * eta.iter().zip(z.iter()).map(|(&t, &zi)| softplus(t) - zi * t).sum::<f64>()
}

/// Hájek-normalized inverse-propensity weights for propensities `e`.
pub fn hajek_weights(e: &[f64], z: &[u8]) -> Result<Vec<f64>> {
    let groups = GroupSpec::new(z)?;
    if e.len() != z.len() {
        return Err(Error::Shape(format!("{} propensities for {} rows", e.len(), z.len())));
    }
    let mut clipped = 0usize;
    let raw: Vec<f64> = e
        .iter()
        .zip(z)
        .map(|(&p, &zi)| {
            let q = p.clamp(PROPENSITY_CLIP, 1.0 - PROPENSITY_CLIP);
            if q != p {
                clipped += 1;
            }
            if zi == 1 {
                1.0 / q
            } else {
                1.0 / (1.0 - q)
            }
        })
        .collect();
    if clipped > 0 {
        log::warn!("{clipped} estimated propensities clipped to [{PROPENSITY_CLIP}, {}]", 1.0 - PROPENSITY_CLIP);
    }
    let (s1, s0) = groups.group_sums(&raw);
    let (n1, n0) = (groups.n1() as f64, groups.n0() as f64);
    Ok(raw.iter().zip(z).map(|(w, &zi)| if zi == 1 { w * n1 / s1 } else { w * n0 / s0 }).collect())
}

/// IPW weights from a main-effects logistic propensity model, Hájek
/// normalized within groups.
pub fn ipw_hajek_weights(x: &DMatrix<f64>, z: &[u8]) -> Result<Vec<f64>> {
    let fit = fit_logistic(x, z, LOGISTIC_MAX_ITER, LOGISTIC_TOL)?;
    hajek_weights(&fit.predict(x), z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(a: Option<Vec<u8>>) -> Dataset {
        Dataset::new(vec![2.0, 4.0, 1.0, 3.0], vec![1, 1, 0, 0], a, DMatrix::zeros(4, 1)).unwrap()
    }

    #[test]
    fn hand_ate() {
        let e = ate_weighted(&toy(None), &[0.5, 1.5, 1.0, 1.0]).unwrap();
        assert!((e.value - 1.5).abs() < 1e-15);
    }

    #[test]
    fn hand_late() {
        let e = late_weighted(&toy(Some(vec![1, 0, 0, 0])), &[1.0; 4]).unwrap();
        assert_eq!(e.denominator, Some(0.5));
        assert!((e.value - 2.0).abs() < 1e-15);
    }

    #[test]
    fn weak_instrument() {
        let d = toy(Some(vec![1, 0, 1, 0]));
        assert!(matches!(late_weighted(&d, &[1.0; 4]), Err(Error::WeakInstrument { .. })));
    }

    #[test]
    fn weight_preconditions() {
        let d = toy(None);
        assert!(matches!(ate_weighted(&d, &[1.0, 1.0, 1.0, 2.0]), Err(Error::InvalidWeights(_))));
        assert!(matches!(ate_weighted(&d, &[2.5, -0.5, 1.0, 1.0]), Err(Error::InvalidWeights(_))));
        assert!(matches!(ate_weighted(&d, &[1.0; 3]), Err(Error::InvalidWeights(_))));
    }

    #[test]
    fn dataset_validation() {
        let x = DMatrix::zeros(2, 1);
        assert!(matches!(Dataset::new(vec![0.0; 2], vec![1, 2], None, x.clone()), Err(Error::Parameter(_))));
        assert!(matches!(Dataset::new(vec![0.0; 2], vec![1, 1], None, x.clone()), Err(Error::EmptyGroup(_))));
        assert!(matches!(Dataset::new(vec![0.0; 3], vec![1, 0], None, x), Err(Error::Shape(_))));
    }

    #[test]
    fn expit_is_stable() {
        assert_eq!(expit(0.0), 0.5);
        assert!(expit(-800.0) >= 0.0 && expit(800.0) == 1.0);
    }

    #[test]
    fn no_signal_logistic() {
        let x = DMatrix::zeros(10, 2);
        let z = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let fit = fit_logistic(&x, &z, 100, 1e-8).unwrap();
        assert!((fit.coef[0] - (0.3f64 / 0.7).ln()).abs() < 1e-8);
        assert_eq!(&fit.coef[1..], &[0.0, 0.0]);
        assert_eq!(fit.dropped, vec![0, 1]);
    }

    #[test]
    fn separation_triggers_ridge_retry() {
        let x = DMatrix::from_column_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let z = [0, 0, 0, 1, 1, 1];
        match fit_logistic(&x, &z, 100, 1e-8) {
            Ok(fit) => assert_eq!(fit.ridge, SEPARATION_RIDGE),
            Err(e) => assert!(matches!(e, Error::Separation { .. }), "{e:?}"),
        }
    }

    #[test]
    fn hajek_two_strata() {
        // Stratum A: e = 0.8, stratum B: e = 0.2.
        let e = [0.8, 0.8, 0.2, 0.8, 0.2, 0.2];
        let z = [1, 1, 1, 0, 0, 0];
        let w = hajek_weights(&e, &z).unwrap();
        // treated raw 1.25, 1.25, 5 (sum 7.5) scaled to 3
        assert!((w[0] - 1.25 * 3.0 / 7.5).abs() < 1e-12);
        assert!((w[2] - 5.0 * 3.0 / 7.5).abs() < 1e-12);
        // control raw 5, 1.25, 1.25
        assert!((w[3] - 5.0 * 3.0 / 7.5).abs() < 1e-12);
        assert!((w[4] - 1.25 * 3.0 / 7.5).abs() < 1e-12);
    }
}
