//! Squared characteristic-function distance between (weighted) empirical
//! distributions, evaluated through a gram matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::GramMatrix;

/// Binary group indicators with their counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSpec {
    z: Vec<u8>,
    n1: usize,
    n0: usize,
}

impl GroupSpec {
    pub fn new(z: &[u8]) -> Result<Self> {
        if let Some(v) = z.iter().find(|v| **v > 1) {
            return Err(Error::Parameter(format!("group indicator must be 0 or 1, got {v}")));
        }
        let n1 = z.iter().filter(|v| **v == 1).count();
        let n0 = z.len() - n1;
        if n1 == 0 {
            return Err(Error::EmptyGroup("no treated (z = 1) units".into()));
        }
        if n0 == 0 {
            return Err(Error::EmptyGroup("no control (z = 0) units".into()));
        }
        Ok(Self { z: z.to_vec(), n1, n0 })
    }

    pub fn z(&self) -> &[u8] {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.z[i] == 1
    }

    /// Σ wᵢzᵢ and Σ wᵢ(1−zᵢ).
    pub fn group_sums(&self, w: &[f64]) -> (f64, f64) {
        let mut s1 = 0.0;
        let mut s0 = 0.0;
        for (zi, wi) in self.z.iter().zip(w) {
            if *zi == 1 {
                s1 += wi;
            } else {
                s0 += wi;
            }
        }
        (s1, s0)
    }
}

/// The three discrepancy terms entering the balancing objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfdReport {
    /// CFD²(weighted treated, full sample).
    pub cfd1_fn: f64,
    /// CFD²(weighted control, full sample).
    pub cfd0_fn: f64,
    /// CFD²(weighted treated, weighted control).
    pub cfd1_0: f64,
    /// (1/n²) 1ᵀK1, shared by the first two terms.
    pub constant: f64,
    /// cfd1_fn + cfd0_fn + cfd1_0.
    pub total: f64,
}

fn normalized(w: Option<&[f64]>, len: usize) -> Result<DVector<f64>> {
    match w {
        None => Ok(DVector::from_element(len, 1.0 / len as f64)),
        Some(w) => {
            if w.len() != len {
                return Err(Error::Shape(format!("{} weights for a sample of size {len}", w.len())));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
            }
            let s: f64 = w.iter().sum();
            if s <= 0.0 {
                return Err(Error::InvalidWeights("weights sum to zero".into()));
            }
            Ok(DVector::from_iterator(len, w.iter().map(|v| v / s)))
        }
    }
}

/// CFD² between two weighted samples: aᵀK_vv a + bᵀK_ww b − 2aᵀK_vw b with
/// a, b the weights normalized to sum one (uniform when omitted).
pub fn cfd2_two_sample(
    kvv: &DMatrix<f64>,
    kww: &DMatrix<f64>,
    kvw: &DMatrix<f64>,
    weights_v: Option<&[f64]>,
    weights_w: Option<&[f64]>,
) -> Result<f64> {
    let (nv, nw) = (kvv.nrows(), kww.nrows());
    if kvv.ncols() != nv || kww.ncols() != nw || kvw.shape() != (nv, nw) {
        return Err(Error::Shape(format!(
            "gram blocks {:?}, {:?}, {:?} are not conformable",
            kvv.shape(),
            kww.shape(),
            kvw.shape()
        )));
    }
    let a = normalized(weights_v, nv)?;
    let b = normalized(weights_w, nw)?;
    Ok(a.dot(&(kvv * &a)) + b.dot(&(kww * &b)) - 2.0 * a.dot(&(kvw * &b)))
}

/// Relative tolerance on the group-sum normalization before a warning fires.
pub const NORMALIZATION_TOL: f64 = 1e-4;

/// Evaluate the treated-vs-full, control-vs-full and treated-vs-control
/// discrepancies at weights `w`.
pub fn cfd_report(k: &GramMatrix, groups: &GroupSpec, w: &[f64]) -> Result<CfdReport> {
    let n = groups.n();
    if k.n() != n || w.len() != n {
        return Err(Error::Shape(format!("gram is {}×{}, {} groups, {} weights", k.n(), k.n(), n, w.len())));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
    }
    let (n1, n0) = (groups.n1() as f64, groups.n0() as f64);
    let (s1, s0) = groups.group_sums(w);
    if (s1 - n1).abs() > NORMALIZATION_TOL * n1 || (s0 - n0).abs() > NORMALIZATION_TOL * n0 {
        log::warn!("weights are not normalized within groups: sums ({s1}, {s0}) vs counts ({n1}, {n0})");
    }
    let a1 = DVector::from_fn(n, |i, _| if groups.is_treated(i) { w[i] / n1 } else { 0.0 });
    let a0 = DVector::from_fn(n, |i, _| if groups.is_treated(i) { 0.0 } else { w[i] / n0 });
    let u = DVector::from_element(n, 1.0 / n as f64);
    let ku = &k.k * &u;
    let ka1 = &k.k * &a1;
    let ka0 = &k.k * &a0;
    let constant = u.dot(&ku);
    let q11 = a1.dot(&ka1);
    let q00 = a0.dot(&ka0);
    let q10 = a1.dot(&ka0);
    let cfd1_fn = q11 + constant - 2.0 * a1.dot(&ku);
    let cfd0_fn = q00 + constant - 2.0 * a0.dot(&ku);
    let cfd1_0 = q11 - 2.0 * q10 + q00;
    Ok(CfdReport { cfd1_fn, cfd0_fn, cfd1_0, constant, total: cfd1_fn + cfd0_fn + cfd1_0 })
}
