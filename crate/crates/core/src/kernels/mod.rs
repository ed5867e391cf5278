//! Spectral densities, the kernels they induce, and gram matrices.
//!
//! A density ω on ℝᵈ defines the translation-invariant kernel
//! k_ω(x, x') = ∫ exp(i tᵀ(x − x')) ω(t) dt. Four families have a closed form
//! here; the student-product family is only reachable through random
//! Fourier features drawn from ω.

mod bandwidth;
mod density;
mod features;
mod spec;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bandwidth::{lower_median, median_heuristic, median_heuristic_counts, Metric};
pub use density::{distance, ClosedForm, DistanceKind, Family, SpectralDensity, MATERN_ORDERS};
pub use features::{rf_gram_matrix, sample_frequencies, FrequencySample};
pub use spec::{Bandwidth, DensitySpec, DEFAULT_FEATURES, DEFAULT_STUDENT_EXPONENT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramSource {
    ClosedForm,
    RandomFeature,
}

/// Symmetric n × n matrix of kernel evaluations on one sample.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub k: DMatrix<f64>,
    pub source: GramSource,
    pub density: SpectralDensity,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    /// Gram of the same kernel multiplied by `c`.
    pub fn scaled(&self, c: f64) -> GramMatrix {
        GramMatrix { k: &self.k * c, source: self.source, density: self.density.clone() }
    }

    /// Principal submatrix on `idx` (rows and columns in the given order).
    pub fn select(&self, idx: &[usize]) -> GramMatrix {
        let m = idx.len();
        let k = DMatrix::from_fn(m, m, |i, j| self.k[(idx[i], idx[j])]);
        GramMatrix { k, source: self.source, density: self.density.clone() }
    }

    /// Smallest eigenvalue of K.
    pub fn min_eigenvalue(&self) -> f64 {
        self.k.clone().symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = x.shape();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            out.push(x[(i, j)]);
        }
    }
    out
}

fn check_covariates(density: &SpectralDensity, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != density.dim() {
        return Err(Error::Shape(format!(
            "density has dimension {} but covariates have {} columns",
            density.dim(),
            x.ncols()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariates"));
    }
    Ok(())
}

/// Gram matrix of `density` on the rows of `x`.
///
/// Uses random features when `freq` is given (required for the
/// student-product family) and the closed form otherwise. Closed-form entries
/// are computed once per unordered pair and mirrored, so K is exactly
/// symmetric.
pub fn gram(density: &SpectralDensity, x: &DMatrix<f64>, freq: Option<&FrequencySample>) -> Result<GramMatrix> {
    check_covariates(density, x)?;
    if let Some(f) = freq {
        let k = rf_gram_matrix(x, f)?;
        return Ok(GramMatrix { k, source: GramSource::RandomFeature, density: density.clone() });
    }
    let cf = density.closed_form()?;
    let (n, d) = x.shape();
    let rows = row_major(x);
    let metric = cf.metric();
    let diag = density.diagonal();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &rows[i * d..(i + 1) * d];
            ((i + 1)..n).map(|j| cf.eval(distance(metric, xi, &rows[j * d..(j + 1) * d]))).collect()
        })
        .collect();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        k[(i, i)] = diag;
        for (off, v) in row.iter().enumerate() {
            let j = i + 1 + off;
            k[(i, j)] = *v;
            k[(j, i)] = *v;
        }
    }
    Ok(GramMatrix { k, source: GramSource::ClosedForm, density: density.clone() })
}

/// Cross-kernel matrix between the rows of `v` and the rows of `w`.
pub fn cross_gram(
    density: &SpectralDensity,
    v: &DMatrix<f64>,
    w: &DMatrix<f64>,
    freq: Option<&FrequencySample>,
) -> Result<DMatrix<f64>> {
    check_covariates(density, v)?;
    check_covariates(density, w)?;
    if let Some(f) = freq {
        if v.ncols() != f.dim() {
            return Err(Error::Shape("frequency dimension does not match covariates".into()));
        }
        let pv = v * f.t.transpose();
        let pw = w * f.t.transpose();
        let inv_l = 1.0 / f.len() as f64;
        let mut k = pv.map(f64::cos) * pw.map(f64::cos).transpose() * inv_l;
        k.gemm(inv_l, &pv.map(f64::sin), &pw.map(f64::sin).transpose(), 1.0);
        return Ok(k);
    }
    let cf = density.closed_form()?;
    let d = v.ncols();
    let (rv, rw) = (row_major(v), row_major(w));
    Ok(DMatrix::from_fn(v.nrows(), w.nrows(), |i, j| {
        cf.eval_pair(&rv[i * d..(i + 1) * d], &rw[j * d..(j + 1) * d])
    }))
}
