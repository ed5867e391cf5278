use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimators::{expit, Dataset};
use crate::inference::derive_seed;

pub const DIM: usize = 10;
pub const MIN_COMPLIER_FRACTION: f64 = 1e-3;
pub const MIN_ORACLE_DRAWS: usize = 1_000_000;
const ORACLE_CHUNK: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propensity {
    Linear,
    #[default]
    Nonlinear,
}

impl Propensity {
    /// P(Z = 1 | X = x) for a 10-dimensional x.
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            Propensity::Linear => expit(0.15 * x.iter().sum::<f64>()),
            Propensity::Nonlinear => {
                let abs: f64 = x[..5].iter().map(|v| v.abs()).sum();
                let lin: f64 = x[5..].iter().sum();
                expit(0.25 * abs + 0.25 * lin - 2.25)
            }
        }
    }
}

impl fmt::Display for Propensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Propensity::Linear => "linear",
            Propensity::Nonlinear => "nonlinear",
        })
    }
}

impl FromStr for Propensity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(Propensity::Linear),
            "nonlinear" => Ok(Propensity::Nonlinear),
            other => Err(Error::Parse(format!("unknown scenario '{other}' (expected linear or nonlinear)"))),
        }
    }
}

/// Coefficients of the compliance index L₁ = intercept + slope·(−½Σ₁⁵X + ½Σ₆¹⁰X)
/// and the scale of U. The defaults give the standard design; the knobs exist
/// to build degenerate variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpParams {
    pub l1_intercept: f64,
    pub l1_slope: f64,
    pub u_scale: f64,
}

impl Default for DgpParams {
    fn default() -> Self {
        Self { l1_intercept: -0.01, l1_slope: 1.0, u_scale: 1.0 }
    }
}

/// Unobserved quantities kept for oracle checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub u: Vec<f64>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    pub a0: Vec<u8>,
    pub a1: Vec<u8>,
    pub e: Vec<f64>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

struct Unit {
    x: [f64; DIM],
    u: f64,
    l1: f64,
    l2: f64,
    a0: u8,
    a1: u8,
}

fn draw_unit<R: Rng>(rng: &mut R, params: &DgpParams) -> Unit {
    let mut x = [0.0; DIM];
    for v in x.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let u = params.u_scale * rng.sample::<f64, _>(StandardNormal);
    let s1: f64 = x[..5].iter().sum();
    let s2: f64 = x[5..].iter().sum();
    let l1 = params.l1_intercept + params.l1_slope * (-0.5 * s1 + 0.5 * s2);
    let l2 = s1 - 0.5 * s2 - u;
    let a0 = (l1 - 0.5 * u.abs() >= 0.0) as u8;
    let a1 = (l1 + 0.5 * u.abs() >= 0.0) as u8;
    Unit { x, u, l1, l2, a0, a1 }
}

/// Draw n units from the IV design. Fails only when a draw leaves one
/// instrument arm empty.
pub fn generate_dataset(
    propensity: Propensity,
    params: &DgpParams,
    n: usize,
    seed: u64,
) -> Result<(Dataset, Latents)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, DIM);
    let mut lat = Latents {
        u: Vec::with_capacity(n),
        l1: Vec::with_capacity(n),
        l2: Vec::with_capacity(n),
        a0: Vec::with_capacity(n),
        a1: Vec::with_capacity(n),
        e: Vec::with_capacity(n),
        y0: Vec::with_capacity(n),
        y1: Vec::with_capacity(n),
    };
    let (mut y, mut z, mut a) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let unit = draw_unit(&mut rng, params);
        let e = propensity.eval(&unit.x);
        let zi = rng.random_bool(e) as u8;
        let eps0: f64 = rng.sample(StandardNormal);
        let eps1: f64 = rng.sample(StandardNormal);
        let y0 = -0.5 * unit.l2 + eps0;
        let y1 = (1.0 + unit.l2) - 0.5 * unit.l2 + eps1;
        let ai = if zi == 1 { unit.a1 } else { unit.a0 };
        for j in 0..DIM {
            x[(i, j)] = unit.x[j];
        }
        y.push(if ai == 1 { y1 } else { y0 });
        z.push(zi);
        a.push(ai);
        lat.u.push(unit.u);
        lat.l1.push(unit.l1);
        lat.l2.push(unit.l2);
        lat.a0.push(unit.a0);
        lat.a1.push(unit.a1);
        lat.e.push(e);
        lat.y0.push(y0);
        lat.y1.push(y1);
    }
    Ok((Dataset::new(y, z, Some(a), x)?, lat))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleLate {
    pub value: f64,
    pub se: f64,
    pub complier_fraction: f64,
    pub draws: usize,
    pub seed: u64,
}

/// Monte Carlo value of E[1 + L₂ | A(1) > A(0)] from `draws` units.
///
/// Draws are generated in fixed-size chunks with derived seeds, so the
/// result does not depend on the thread count.
pub fn oracle_late(params: &DgpParams, draws: usize, seed: u64) -> Result<OracleLate> {
    if draws < MIN_ORACLE_DRAWS {
        return Err(Error::Parameter(format!("oracle needs at least {MIN_ORACLE_DRAWS} draws, got {draws}")));
    }
    let chunks = draws.div_ceil(ORACLE_CHUNK);
    let (count, sum, sumsq) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, c as u64));
            let len = ORACLE_CHUNK.min(draws - c * ORACLE_CHUNK);
            let (mut k, mut s, mut s2) = (0usize, 0.0, 0.0);
            for _ in 0..len {
                let unit = draw_unit(&mut rng, params);
                if unit.a1 > unit.a0 {
                    let v = 1.0 + unit.l2;
                    k += 1;
                    s += v;
                    s2 += v * v;
                }
            }
            (k, s, s2)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0usize, 0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1, acc.2 + v.2));
    let fraction = count as f64 / draws as f64;
    if fraction < MIN_COMPLIER_FRACTION {
        return Err(Error::DegenerateScenario { fraction });
    }
    let k = count as f64;
    let mean = sum / k;
    let var = ((sumsq - k * mean * mean) / (k - 1.0)).max(0.0);
    Ok(OracleLate { value: mean, se: (var / k).sqrt(), complier_fraction: fraction, draws, seed })
}
