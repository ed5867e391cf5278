//! Subsampling and bootstrap confidence intervals for arbitrary estimator
//! pipelines.

mod pipeline;

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::estimators::Dataset;

pub use pipeline::{CfdPipeline, EstimatorPipeline, IpwPipeline, UniformPipeline};

pub const MAX_GROUP_RETRIES: usize = 100;
pub const MIN_BOOTSTRAP_DRAWS: usize = 100;

/// SplitMix64 finalizer applied to `master + (index + 1)·golden`, giving
/// well-mixed per-replication seeds from a counter.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Empirical quantile with linear interpolation between order statistics
/// (the "type 7" rule). `sorted` must be ascending and nonempty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    Subsampling,
    Bootstrap,
}

impl fmt::Display for CiMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CiMethod::Subsampling => "subsampling",
            CiMethod::Bootstrap => "bootstrap",
        })
    }
}

/// Which intervals to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiChoice {
    Subsampling,
    Bootstrap,
    #[default]
    Both,
    None,
}

impl CiChoice {
    pub fn subsampling(self) -> bool {
        matches!(self, CiChoice::Subsampling | CiChoice::Both)
    }

    pub fn bootstrap(self) -> bool {
        matches!(self, CiChoice::Bootstrap | CiChoice::Both)
    }
}

impl FromStr for CiChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "subsampling" => Ok(CiChoice::Subsampling),
            "bootstrap" => Ok(CiChoice::Bootstrap),
            "both" => Ok(CiChoice::Both),
            "none" => Ok(CiChoice::None),
            other => Err(Error::Parse(format!(
                "unknown interval method '{other}' (expected subsampling, bootstrap, both or none)"
            ))),
        }
    }
}

impl fmt::Display for CiChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CiChoice::Subsampling => "subsampling",
            CiChoice::Bootstrap => "bootstrap",
            CiChoice::Both => "both",
            CiChoice::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiResult {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub method: CiMethod,
    pub alpha: f64,
    /// Subsample size b, or n for the bootstrap.
    pub size: usize,
    /// Requested number of draws.
    pub draws: usize,
    /// Draws whose estimate succeeded and entered the quantiles.
    pub replications: usize,
    pub failures: usize,
    pub warnings: Vec<String>,
}

impl CiResult {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Multiplicity vector of a resample that contains both groups, retrying
/// draws that miss one.
fn group_preserving<R: Rng>(
    data: &Dataset,
    rng: &mut R,
    mut draw: impl FnMut(&mut R) -> Vec<usize>,
) -> Result<Vec<usize>> {
    let z = data.z();
    for _ in 0..MAX_GROUP_RETRIES {
        let counts = draw(rng);
        let (mut t, mut c) = (false, false);
        for (i, &k) in counts.iter().enumerate() {
            if k > 0 {
                if z[i] == 1 {
                    t = true;
                } else {
                    c = true;
                }
            }
        }
        if t && c {
            return Ok(counts);
        }
    }
    Err(Error::DegenerateSubsample(format!(
        "no draw in {MAX_GROUP_RETRIES} attempts contained both groups"
    )))
}

fn subsample_counts<R: Rng>(rng: &mut R, n: usize, b: usize) -> Vec<usize> {
    let mut counts = vec![0; n];
    for i in index::sample(rng, n, b) {
        counts[i] = 1;
    }
    counts
}

fn bootstrap_counts<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut counts = vec![0; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    counts
}

/// Estimates on `draws` resamples, in replication order; failed replications
/// are dropped and counted. Resampling failures abort.
fn replicate(
    data: &Dataset,
    pipeline: &dyn EstimatorPipeline,
    draws: usize,
    seed: u64,
    resample: impl Fn(&mut ChaCha8Rng) -> Vec<usize> + Sync,
) -> Result<(Vec<f64>, usize, Vec<String>)> {
    let outcomes: Vec<Result<f64>> = (0..draws)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2 * k as u64));
            let counts = group_preserving(data, &mut rng, &resample)?;
            Ok(pipeline.estimate_resample(data, &counts, derive_seed(seed, 2 * k as u64 + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(draws);
    let mut warnings = Vec::new();
    for (k, r) in outcomes.into_iter().enumerate() {
        match r {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(v) => warnings.push(format!("replication {k}: non-finite estimate {v}")),
            Err(e) => warnings.push(format!("replication {k}: {e}")),
        }
    }
    let failures = draws - values.len();
    if failures > 0 {
        log::warn!("{failures} of {draws} resample replications failed and were excluded");
    }
    if values.len() < 2 {
        return Err(Error::DegenerateSubsample(format!(
            "only {} of {draws} replications produced an estimate",
            values.len()
        )));
    }
    values.sort_by(f64::total_cmp);
    Ok((values, failures, warnings))
}

/// Subsampling interval around a given full-sample estimate `point`.
pub fn subsample_ci_at(
    data: &Dataset,
    pipeline: &dyn EstimatorPipeline,
    point: f64,
    b: usize,
    draws: usize,
    alpha: f64,
    seed: u64,
) -> Result<CiResult> {
    let n = data.n();
    check_alpha(alpha)?;
    if b < 2 || b >= n {
        return Err(Error::Parameter(format!("subsample size must satisfy 2 <= b < n = {n}, got {b}")));
    }
    if draws < 2 {
        return Err(Error::Parameter(format!("need at least 2 subsample draws, got {draws}")));
    }
    let (estimates, failures, warnings) =
        replicate(data, pipeline, draws, seed, |rng| subsample_counts(rng, n, b))?;
    let root_b = (b as f64).sqrt();
    let roots: Vec<f64> = estimates.iter().map(|t| root_b * (t - point)).collect();
    let root_n = (n as f64).sqrt();
    Ok(CiResult {
        point,
        lower: point - quantile(&roots, 1.0 - alpha / 2.0) / root_n,
        upper: point - quantile(&roots, alpha / 2.0) / root_n,
        method: CiMethod::Subsampling,
        alpha,
        size: b,
        draws,
        replications: estimates.len(),
        failures,
        warnings,
    })
}

/// Subsampling confidence interval at the √n rate from `draws` subsamples of
/// size `b` drawn without replacement.
pub fn subsample_ci(
    data: &Dataset,
    pipeline: &dyn EstimatorPipeline,
    b: usize,
    draws: usize,
    alpha: f64,
    seed: u64,
) -> Result<CiResult> {
    let point = pipeline.estimate(data, seed)?;
    subsample_ci_at(data, pipeline, point, b, draws, alpha, seed)
}

/// Percentile bootstrap interval around a given full-sample estimate.
pub fn bootstrap_ci_at(
    data: &Dataset,
    pipeline: &dyn EstimatorPipeline,
    point: f64,
    draws: usize,
    alpha: f64,
    seed: u64,
) -> Result<CiResult> {
    check_alpha(alpha)?;
    if draws < MIN_BOOTSTRAP_DRAWS {
        return Err(Error::Parameter(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_DRAWS} draws, got {draws}"
        )));
    }
    let n = data.n();
    let (estimates, failures, warnings) = replicate(data, pipeline, draws, seed, |rng| bootstrap_counts(rng, n))?;
    Ok(CiResult {
        point,
        lower: quantile(&estimates, alpha / 2.0),
        upper: quantile(&estimates, 1.0 - alpha / 2.0),
        method: CiMethod::Bootstrap,
        alpha,
        size: n,
        draws,
        replications: estimates.len(),
        failures,
        warnings,
    })
}

/// Nonparametric percentile bootstrap interval from `draws` resamples of size n.
pub fn bootstrap_ci(
    data: &Dataset,
    pipeline: &dyn EstimatorPipeline,
    draws: usize,
    alpha: f64,
    seed: u64,
) -> Result<CiResult> {
    let point = pipeline.estimate(data, seed)?;
    bootstrap_ci_at(data, pipeline, point, draws, alpha, seed)
}

/// Candidate subsample sizes round(n^g) for g = 0.45, 0.50, ..., 0.85, with
/// duplicates removed and values kept in [2, n − 1].
pub fn default_grid(n: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = (0..9)
        .map(|k| ((n as f64).powf(0.45 + 0.05 * k as f64).round() as usize).clamp(2, n.saturating_sub(1).max(2)))
        .collect();
    grid.dedup();
    grid
}

/// Default fixed subsample size round(2.5·√n), kept in [2, n − 1].
pub fn default_subsample_size(n: usize) -> usize {
    ((2.5 * (n as f64).sqrt()).round() as usize).clamp(2, n.saturating_sub(1).max(2))
}

/// How the subsample size is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SubsampleSize {
    /// round(2.5·√n).
    #[default]
    Rule,
    /// Minimum-volatility selection over the default grid.
    Auto,
    Fixed(usize),
}

impl SubsampleSize {
    /// The size for a sample of n rows; `Auto` needs a search and yields `None`.
    pub fn fixed_for(self, n: usize) -> Option<usize> {
        match self {
            SubsampleSize::Rule => Some(default_subsample_size(n)),
            SubsampleSize::Fixed(b) => Some(b),
            SubsampleSize::Auto => None,
        }
    }
}

impl fmt::Display for SubsampleSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubsampleSize::Rule => f.write_str("rule"),
            SubsampleSize::Auto => f.write_str("auto"),
            SubsampleSize::Fixed(b) => write!(f, "{b}"),
        }
    }
}

impl FromStr for SubsampleSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rule" | "default" => Ok(SubsampleSize::Rule),
            "auto" => Ok(SubsampleSize::Auto),
            other => other
                .parse()
                .map(SubsampleSize::Fixed)
                .map_err(|_| Error::Parse(format!("subsample size: expected auto, rule or an integer, got '{other}'"))),
        }
    }
}

impl Serialize for SubsampleSize {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SubsampleSize::Fixed(b) => serializer.serialize_u64(*b as u64),
            other => serializer.collect_str(other),
        }
    }
}

impl<'de> Deserialize<'de> for SubsampleSize {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(b) => Ok(SubsampleSize::Fixed(b)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Interval settings shared by the command line and the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceSettings {
    pub ci: CiChoice,
    pub alpha: f64,
    pub subsample_size: SubsampleSize,
    pub subsample_draws: usize,
    pub bootstrap_draws: usize,
    pub window: usize,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        Self {
            ci: CiChoice::Both,
            alpha: 0.05,
            subsample_size: SubsampleSize::Auto,
            subsample_draws: 500,
            bootstrap_draws: 500,
            window: 1,
        }
    }
}

impl InferenceSettings {
    /// Lighter settings for simulation studies, where every replication
    /// repeats the whole interval computation: 200 draws each and the
    /// round(2.5·√n) subsample size instead of the grid search.
    pub fn study() -> Self {
        Self { subsample_size: SubsampleSize::Rule, subsample_draws: 200, bootstrap_draws: 200, ..Self::default() }
    }
}

/// Both intervals for one data set, as requested by `settings`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervals {
    pub subsampling: Option<CiResult>,
    pub bootstrap: Option<CiResult>,
    pub selection: Option<SubsampleSelection>,
}

/// Compute the requested intervals around a known full-sample estimate.
pub fn intervals(
    data: &Dataset,
    pipeline: &dyn EstimatorPipeline,
    point: f64,
    settings: &InferenceSettings,
    seed: u64,
) -> Result<Intervals> {
    let mut out = Intervals { subsampling: None, bootstrap: None, selection: None };
    if settings.ci.subsampling() {
        let b = match settings.subsample_size.fixed_for(data.n()) {
            Some(b) => b,
            None => {
                let sel = select_subsample_size(
                    data,
                    pipeline,
                    &default_grid(data.n()),
                    settings.window,
                    settings.alpha,
                    settings.subsample_draws,
                    derive_seed(seed, 2),
                )?;
                let b = sel.b;
                out.selection = Some(sel);
                b
            }
        };
        out.subsampling = Some(subsample_ci_at(
            data,
            pipeline,
            point,
            b,
            settings.subsample_draws,
            settings.alpha,
            derive_seed(seed, 0),
        )?);
    }
    if settings.ci.bootstrap() {
        out.bootstrap =
            Some(bootstrap_ci_at(data, pipeline, point, settings.bootstrap_draws, settings.alpha, derive_seed(seed, 1))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleSelection {
    pub b: usize,
    pub grid: Vec<usize>,
    /// Endpoint volatility per grid point (absent near the grid edges).
    pub volatility: Vec<Option<f64>>,
    pub intervals: Vec<(f64, f64)>,
}

fn sample_sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Minimum-volatility choice of the subsample size: for each interior grid
/// point, sum the standard deviations of the lower and of the upper interval
/// endpoints over the 2·window + 1 neighbouring sizes and take the smallest
/// (ties to the smaller b).
#[allow(clippy::too_many_arguments)]
pub fn select_subsample_size(
    data: &Dataset,
    pipeline: &dyn EstimatorPipeline,
    grid: &[usize],
    window: usize,
    alpha: f64,
    draws: usize,
    seed: u64,
) -> Result<SubsampleSelection> {
    if window < 1 {
        return Err(Error::Parameter("window must be at least 1".into()));
    }
    if grid.len() < 2 * window + 1 {
        return Err(Error::Parameter(format!(
            "grid of {} sizes is shorter than 2·window + 1 = {}",
            grid.len(),
            2 * window + 1
        )));
    }
    if grid.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::Parameter("grid must be strictly increasing".into()));
    }
    let point = pipeline.estimate(data, seed)?;
    let mut intervals = Vec::with_capacity(grid.len());
    for &b in grid {
        let ci = subsample_ci_at(data, pipeline, point, b, draws, alpha, seed)?;
        intervals.push((ci.lower, ci.upper));
    }
    let mut volatility = vec![None; grid.len()];
    let mut best: Option<(f64, usize)> = None;
    for i in window..grid.len() - window {
        let span = &intervals[i - window..=i + window];
        let lo: Vec<f64> = span.iter().map(|c| c.0).collect();
        let hi: Vec<f64> = span.iter().map(|c| c.1).collect();
        let v = sample_sd(&lo) + sample_sd(&hi);
        volatility[i] = Some(v);
        if best.is_none_or(|(bv, _)| v < bv) {
            best = Some((v, i));
        }
    }
    let (_, i) = best.expect("grid has an interior point");
    Ok(SubsampleSelection { b: grid[i], grid: grid.to_vec(), volatility, intervals })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile(&v, 0.1) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn seeds_are_distinct() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|k| derive_seed(42, k)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }

    #[test]
    fn grid_for_400() {
        let g = default_grid(400);
        assert_eq!(g.first(), Some(&15));
        assert_eq!(g.last(), Some(&163));
        assert_eq!(default_subsample_size(400), 50);
    }

    #[test]
    fn subsample_size_parsing() {
        assert_eq!("auto".parse::<SubsampleSize>().unwrap(), SubsampleSize::Auto);
        assert_eq!("37".parse::<SubsampleSize>().unwrap(), SubsampleSize::Fixed(37));
        assert!("x".parse::<SubsampleSize>().is_err());
        assert_eq!(SubsampleSize::Rule.fixed_for(100), Some(25));
    }
}
