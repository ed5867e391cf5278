use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, ChiSquared, Distribution, Normal, StudentT};

use super::density::SpectralDensity;
use crate::error::{Error, Result};

/// L i.i.d. frequency draws from the normalized spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySample {
    /// L × d, one frequency per row.
    pub t: DMatrix<f64>,
    pub seed: u64,
}

impl FrequencySample {
    pub fn len(&self) -> usize {
        self.t.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.t.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.t.ncols()
    }
}

/// Draw `l` frequencies from the density proportional to ω.
///
/// Student-product coordinates use the change of variables tⱼ = t′/(γ√(2sⱼ−1))
/// with t′ ~ t(2sⱼ−1); isotropic Matérn uses the multivariate-t analogue
/// t = g/(γ√W), g ~ N(0, I), W ~ χ²(2ν).
pub fn sample_frequencies(density: &SpectralDensity, l: usize, seed: u64) -> Result<FrequencySample> {
    if l == 0 {
        return Err(Error::Parameter("number of random features must be at least 1".into()));
    }
    let d = density.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = DMatrix::<f64>::zeros(l, d);
    match density {
        SpectralDensity::Gaussian { gamma, .. } => {
            let normal = Normal::new(0.0, std::f64::consts::SQRT_2 / gamma)
                .map_err(|e| Error::Parameter(e.to_string()))?;
            fill_rows(&mut t, |_, _| normal.sample(&mut rng));
        }
        SpectralDensity::CauchyProduct { gamma, .. } => {
            let cauchy = Cauchy::new(0.0, 1.0 / gamma).map_err(|e| Error::Parameter(e.to_string()))?;
            fill_rows(&mut t, |_, _| cauchy.sample(&mut rng));
        }
        SpectralDensity::StudentProduct { gamma, exponents } => {
            let coords = exponents
                .iter()
                .map(|s| {
                    let dof = 2.0 * s - 1.0;
                    StudentT::new(dof)
                        .map(|dist| (dist, 1.0 / (gamma * dof.sqrt())))
                        .map_err(|e| Error::Parameter(e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            fill_rows(&mut t, |_, j| {
                let (dist, scale) = &coords[j];
                dist.sample(&mut rng) * scale
            });
        }
        SpectralDensity::IsotropicMatern { gamma, s, dim } => {
            let nu = s - *dim as f64 / 2.0;
            let chi = ChiSquared::new(2.0 * nu).map_err(|e| Error::Parameter(e.to_string()))?;
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            for r in 0..l {
                let w: f64 = chi.sample(&mut rng);
                let scale = 1.0 / (gamma * w.sqrt());
                for j in 0..d {
                    t[(r, j)] = normal.sample(&mut rng) * scale;
                }
            }
        }
        SpectralDensity::Energy { .. } => return Err(Error::ImproperDensity("energy")),
    }
    Ok(FrequencySample { t, seed })
}

// Row-by-row fill keeps the draw order independent of the storage layout.
fn fill_rows(t: &mut DMatrix<f64>, mut draw: impl FnMut(usize, usize) -> f64) {
    for r in 0..t.nrows() {
        for j in 0..t.ncols() {
            t[(r, j)] = draw(r, j);
        }
    }
}

/// Random-feature gram K̃ = ΦΦᵀ with φ(x) = L^(−1/2)(cos Tx, sin Tx).
///
/// The result is symmetrized exactly and its diagonal set to 1 (cos² + sin²).
pub fn rf_gram_matrix(x: &DMatrix<f64>, freq: &FrequencySample) -> Result<DMatrix<f64>> {
    if x.ncols() != freq.dim() {
        return Err(Error::Shape(format!(
            "covariates have {} columns but frequencies have dimension {}",
            x.ncols(),
            freq.dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariates"));
    }
    let n = x.nrows();
    let proj = x * freq.t.transpose();
    let cos = proj.map(f64::cos);
    let sin = proj.map(f64::sin);
    let inv_l = 1.0 / freq.len() as f64;
    let mut k = &cos * cos.transpose();
    k.gemm(inv_l, &sin, &sin.transpose(), inv_l);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in (i + 1)..n {
            k[(j, i)] = k[(i, j)];
        }
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coord_variance(t: &DMatrix<f64>, j: usize) -> f64 {
        let col = t.column(j);
        let m = col.mean();
        col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (col.len() as f64 - 1.0)
    }

    #[test]
    fn gaussian_moment() {
        let gamma = 1.7;
        let d = SpectralDensity::gaussian(gamma, 3).unwrap();
        let f = sample_frequencies(&d, 100_000, 11).unwrap();
        let target = 2.0 / (gamma * gamma);
        for j in 0..3 {
            let v = coord_variance(&f.t, j);
            assert!((v / target - 1.0).abs() < 0.05, "coordinate {j}: {v} vs {target}");
        }
    }

    #[test]
    fn student_moment() {
        let gamma = 0.8;
        let d = SpectralDensity::student_uniform(gamma, 3.0, 2).unwrap();
        let f = sample_frequencies(&d, 100_000, 5).unwrap();
        let target = 1.0 / (3.0 * gamma * gamma);
        for j in 0..2 {
            let v = coord_variance(&f.t, j);
            assert!((v / target - 1.0).abs() < 0.05, "coordinate {j}: {v} vs {target}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let d = SpectralDensity::cauchy_product(1.0, 4).unwrap();
        let a = sample_frequencies(&d, 257, 99).unwrap();
        let b = sample_frequencies(&d, 257, 99).unwrap();
        assert_eq!(a, b);
        let c = sample_frequencies(&d, 257, 100).unwrap();
        assert_ne!(a.t, c.t);
    }

    #[test]
    fn energy_is_not_samplable() {
        let d = SpectralDensity::energy(2).unwrap();
        assert_eq!(sample_frequencies(&d, 10, 0), Err(Error::ImproperDensity("energy")));
    }

    #[test]
    fn zero_features_rejected() {
        let d = SpectralDensity::gaussian(1.0, 2).unwrap();
        assert!(matches!(sample_frequencies(&d, 0, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn single_frequency_is_a_cosine() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 0.4, -1.3]);
        let f = FrequencySample { t: DMatrix::from_element(1, 1, 2.1), seed: 0 };
        let k = rf_gram_matrix(&x, &f).unwrap();
        for i in 0..3 {
            assert_eq!(k[(i, i)], 1.0);
            for j in 0..3 {
                let expect = (2.1 * (x[i] - x[j])).cos();
                assert!((k[(i, j)] - expect).abs() < 1e-14);
                assert_eq!(k[(i, j)], k[(j, i)]);
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let x = DMatrix::zeros(3, 2);
        let f = FrequencySample { t: DMatrix::zeros(5, 3), seed: 0 };
        assert!(matches!(rf_gram_matrix(&x, &f), Err(Error::Shape(_))));
    }
}
