use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::bandwidth::{median_heuristic, median_heuristic_counts, Metric};
use super::density::{Family, SpectralDensity};
use super::features::{sample_frequencies, FrequencySample};
use crate::error::{Error, Result};

pub const DEFAULT_FEATURES: usize = 10_000;
pub const DEFAULT_STUDENT_EXPONENT: f64 = 3.0;
const DEFAULT_MATERN_NU: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Auto,
    Fixed(f64),
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bandwidth::Auto => f.write_str("auto"),
            Bandwidth::Fixed(g) => write!(f, "{g}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaternSmoothness {
    Nu(f64),
    S(f64),
}

/// User-facing density description, e.g. `gaussian(gamma=auto)` or
/// `student(s=3,L=10000)`. Dimension and `auto` bandwidths are filled in by
/// [`DensitySpec::resolve`] once covariates are known.
#[derive(Debug, Clone, PartialEq)]
pub enum DensitySpec {
    Gaussian { gamma: Bandwidth },
    Laplacian { gamma: Bandwidth },
    Student { s: f64, features: usize, gamma: Bandwidth },
    Matern { smoothness: MaternSmoothness, gamma: Bandwidth },
    Energy,
}

impl DensitySpec {
    pub fn family(&self) -> Family {
        match self {
            DensitySpec::Gaussian { .. } => Family::Gaussian,
            DensitySpec::Laplacian { .. } => Family::CauchyProduct,
            DensitySpec::Student { .. } => Family::StudentProduct,
            DensitySpec::Matern { .. } => Family::IsotropicMatern,
            DensitySpec::Energy => Family::Energy,
        }
    }

    /// Short label used in tables.
    pub fn label(&self) -> &'static str {
        match self {
            DensitySpec::Gaussian { .. } => "gaussian",
            DensitySpec::Laplacian { .. } => "laplacian",
            DensitySpec::Student { .. } => "t5",
            DensitySpec::Matern { .. } => "matern",
            DensitySpec::Energy => "energy",
        }
    }

    fn gamma(&self) -> Bandwidth {
        match self {
            DensitySpec::Gaussian { gamma }
            | DensitySpec::Laplacian { gamma }
            | DensitySpec::Student { gamma, .. }
            | DensitySpec::Matern { gamma, .. } => *gamma,
            DensitySpec::Energy => Bandwidth::Fixed(1.0),
        }
    }

    /// Build the density for covariates `x`, running the median heuristic for
    /// `auto` bandwidths and drawing frequencies (seeded) for the student family.
    pub fn resolve(&self, x: &DMatrix<f64>, seed: u64) -> Result<(SpectralDensity, Option<FrequencySample>)> {
        self.resolve_counts(x, None, seed)
    }

    /// As [`DensitySpec::resolve`] for a sample in which row i appears
    /// `counts[i]` times.
    pub fn resolve_counts(
        &self,
        x: &DMatrix<f64>,
        counts: Option<&[usize]>,
        seed: u64,
    ) -> Result<(SpectralDensity, Option<FrequencySample>)> {
        let d = x.ncols();
        let metric = Metric::for_family(self.family());
        let gamma = match (self.gamma(), counts) {
            (Bandwidth::Fixed(g), _) => g,
            (Bandwidth::Auto, None) => median_heuristic(x, metric)?,
            (Bandwidth::Auto, Some(c)) => median_heuristic_counts(x, c, metric)?,
        };
        let density = match self {
            DensitySpec::Gaussian { .. } => SpectralDensity::gaussian(gamma, d)?,
            DensitySpec::Laplacian { .. } => SpectralDensity::cauchy_product(gamma, d)?,
            DensitySpec::Student { s, .. } => SpectralDensity::student_uniform(gamma, *s, d)?,
            DensitySpec::Matern { smoothness: MaternSmoothness::Nu(nu), .. } => {
                SpectralDensity::matern_order(gamma, *nu, d)?
            }
            DensitySpec::Matern { smoothness: MaternSmoothness::S(s), .. } => {
                SpectralDensity::isotropic_matern(gamma, *s, d)?
            }
            DensitySpec::Energy => SpectralDensity::energy(d)?,
        };
        let freq = match self {
            DensitySpec::Student { features, .. } => Some(sample_frequencies(&density, *features, seed)?),
            _ => None,
        };
        Ok((density, freq))
    }
}

impl fmt::Display for DensitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DensitySpec::Gaussian { gamma } => write!(f, "gaussian(gamma={gamma})"),
            DensitySpec::Laplacian { gamma } => write!(f, "laplacian(gamma={gamma})"),
            DensitySpec::Student { s, features, gamma } => write!(f, "student(s={s},L={features},gamma={gamma})"),
            DensitySpec::Matern { smoothness: MaternSmoothness::Nu(nu), gamma } => {
                write!(f, "matern(nu={nu},gamma={gamma})")
            }
            DensitySpec::Matern { smoothness: MaternSmoothness::S(s), gamma } => write!(f, "matern(s={s},gamma={gamma})"),
            DensitySpec::Energy => f.write_str("energy"),
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>().map_err(|_| Error::Parse(format!("{key}: expected a number, got '{v}'")))
}

fn parse_bandwidth(v: &str) -> Result<Bandwidth> {
    if v.eq_ignore_ascii_case("auto") {
        return Ok(Bandwidth::Auto);
    }
    let g = parse_f64("gamma", v)?;
    if !(g.is_finite() && g > 0.0) {
        return Err(Error::Parse(format!("gamma must be positive, got {g}")));
    }
    Ok(Bandwidth::Fixed(g))
}

impl FromStr for DensitySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) => {
                let inner = s[open + 1..]
                    .strip_suffix(')')
                    .ok_or_else(|| Error::Parse(format!("missing ')' in density spec '{s}'")))?;
                (s[..open].trim(), inner)
            }
            None => (s, ""),
        };
        let mut pairs = Vec::new();
        for part in args.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, got '{part}'")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut gamma = Bandwidth::Auto;
        let mut s_param = None;
        let mut nu = None;
        let mut features = DEFAULT_FEATURES;
        for (k, v) in &pairs {
            match k.as_str() {
                "gamma" => gamma = parse_bandwidth(v)?,
                "s" => s_param = Some(parse_f64("s", v)?),
                "nu" => nu = Some(parse_f64("nu", v)?),
                "L" | "l" => {
                    features = v
                        .parse::<usize>()
                        .map_err(|_| Error::Parse(format!("L: expected a positive integer, got '{v}'")))?;
                    if features == 0 {
                        return Err(Error::Parse("L must be at least 1".into()));
                    }
                }
                other => return Err(Error::Parse(format!("unknown density parameter '{other}'"))),
            }
        }
        let reject = |allowed: &[&str]| -> Result<()> {
            for (k, _) in &pairs {
                if !allowed.contains(&k.as_str()) {
                    return Err(Error::Parse(format!("parameter '{k}' does not apply to {name}")));
                }
            }
            Ok(())
        };
        match name.to_ascii_lowercase().as_str() {
            "gaussian" => {
                reject(&["gamma"])?;
                Ok(DensitySpec::Gaussian { gamma })
            }
            "laplacian" | "cauchy" | "cauchy_product" => {
                reject(&["gamma"])?;
                Ok(DensitySpec::Laplacian { gamma })
            }
            "student" | "t" | "student_product" => {
                reject(&["gamma", "s", "L", "l"])?;
                Ok(DensitySpec::Student { s: s_param.unwrap_or(DEFAULT_STUDENT_EXPONENT), features, gamma })
            }
            "matern" | "isotropic_matern" => {
                reject(&["gamma", "s", "nu"])?;
                let smoothness = match (nu, s_param) {
                    (Some(_), Some(_)) => return Err(Error::Parse("give either nu or s for matern, not both".into())),
                    (Some(nu), None) => MaternSmoothness::Nu(nu),
                    (None, Some(s)) => MaternSmoothness::S(s),
                    (None, None) => MaternSmoothness::Nu(DEFAULT_MATERN_NU),
                };
                Ok(DensitySpec::Matern { smoothness, gamma })
            }
            "energy" => {
                reject(&[])?;
                Ok(DensitySpec::Energy)
            }
            other => Err(Error::Parse(format!("unknown density family '{other}'"))),
        }
    }
}

impl Serialize for DensitySpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DensitySpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
