use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-integer Matérn orders with a shipped closed form.
pub const MATERN_ORDERS: [f64; 4] = [0.5, 1.5, 2.5, 3.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    CauchyProduct,
    StudentProduct,
    IsotropicMatern,
    Energy,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::CauchyProduct => "cauchy_product",
            Family::StudentProduct => "student_product",
            Family::IsotropicMatern => "isotropic_matern",
            Family::Energy => "energy",
        }
    }
}

/// A spectral density ω together with the parameters that pin down its kernel.
///
/// Each variant stores the covariate dimension it was built for; kernels are
/// only evaluated on vectors of that length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SpectralDensity {
    /// ω ∝ exp(−γ²‖t‖²/4), kernel exp(−‖x−x'‖²/γ²).
    Gaussian { gamma: f64, dim: usize },
    /// ω ∝ ∏ⱼ (1+γ²tⱼ²)⁻¹, kernel exp(−‖x−x'‖₁/γ).
    CauchyProduct { gamma: f64, dim: usize },
    /// ω ∝ ∏ⱼ (1+γ²tⱼ²)^(−sⱼ); only available through random features.
    StudentProduct { gamma: f64, exponents: Vec<f64> },
    /// ω ∝ (1+γ²‖t‖²)^(−s), a Matérn kernel of order ν = s − d/2.
    IsotropicMatern { gamma: f64, s: f64, dim: usize },
    /// Improper ω ∝ ‖t‖^(−(d+1)), kernel −‖x−x'‖.
    Energy { dim: usize },
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("bandwidth must be positive and finite, got {gamma}")))
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::Parameter("dimension must be at least 1".into()));
    }
    Ok(())
}

impl SpectralDensity {
    pub fn gaussian(gamma: f64, dim: usize) -> Result<Self> {
        check_gamma(gamma)?;
        check_dim(dim)?;
        Ok(Self::Gaussian { gamma, dim })
    }

    pub fn cauchy_product(gamma: f64, dim: usize) -> Result<Self> {
        check_gamma(gamma)?;
        check_dim(dim)?;
        Ok(Self::CauchyProduct { gamma, dim })
    }

    pub fn student_product(gamma: f64, exponents: Vec<f64>) -> Result<Self> {
        check_gamma(gamma)?;
        check_dim(exponents.len())?;
        if let Some(s) = exponents.iter().find(|s| !(s.is_finite() && **s > 0.5)) {
            return Err(Error::Parameter(format!(
                "student_product exponents must exceed 1/2, got {s}"
            )));
        }
        Ok(Self::StudentProduct { gamma, exponents })
    }

    /// Same exponent `s` in every coordinate (`s = 3` gives t₅ marginals).
    pub fn student_uniform(gamma: f64, s: f64, dim: usize) -> Result<Self> {
        Self::student_product(gamma, vec![s; dim])
    }

    pub fn isotropic_matern(gamma: f64, s: f64, dim: usize) -> Result<Self> {
        check_gamma(gamma)?;
        check_dim(dim)?;
        if !(s.is_finite() && s > dim as f64 / 2.0) {
            return Err(Error::Parameter(format!(
                "isotropic_matern requires s > d/2 = {}, got s = {s}",
                dim as f64 / 2.0
            )));
        }
        Ok(Self::IsotropicMatern { gamma, s, dim })
    }

    /// Matérn density parametrized directly by the kernel order ν = s − d/2.
    pub fn matern_order(gamma: f64, nu: f64, dim: usize) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::Parameter(format!("Matérn order must be positive, got ν = {nu}")));
        }
        Self::isotropic_matern(gamma, nu + dim as f64 / 2.0, dim)
    }

    pub fn energy(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self::Energy { dim })
    }

    pub fn family(&self) -> Family {
        match self {
            Self::Gaussian { .. } => Family::Gaussian,
            Self::CauchyProduct { .. } => Family::CauchyProduct,
            Self::StudentProduct { .. } => Family::StudentProduct,
            Self::IsotropicMatern { .. } => Family::IsotropicMatern,
            Self::Energy { .. } => Family::Energy,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian { dim, .. }
            | Self::CauchyProduct { dim, .. }
            | Self::IsotropicMatern { dim, .. }
            | Self::Energy { dim } => *dim,
            Self::StudentProduct { exponents, .. } => exponents.len(),
        }
    }

    pub fn bandwidth(&self) -> Option<f64> {
        match self {
            Self::Gaussian { gamma, .. }
            | Self::CauchyProduct { gamma, .. }
            | Self::StudentProduct { gamma, .. }
            | Self::IsotropicMatern { gamma, .. } => Some(*gamma),
            Self::Energy { .. } => None,
        }
    }

    /// Matérn order ν = s − d/2 (isotropic Matérn only).
    pub fn matern_nu(&self) -> Option<f64> {
        match self {
            Self::IsotropicMatern { s, dim, .. } => Some(s - *dim as f64 / 2.0),
            _ => None,
        }
    }

    /// Kernel value at zero lag: 1 for the normalized families, 0 for energy.
    pub fn diagonal(&self) -> f64 {
        match self {
            Self::Energy { .. } => 0.0,
            _ => 1.0,
        }
    }

    /// Closed-form kernel as a function of one pairwise distance.
    pub fn closed_form(&self) -> Result<ClosedForm> {
        match *self {
            Self::Gaussian { gamma, .. } => Ok(ClosedForm::Gaussian { inv_gamma_sq: 1.0 / (gamma * gamma) }),
            Self::CauchyProduct { gamma, .. } => Ok(ClosedForm::Laplacian { inv_gamma: 1.0 / gamma }),
            Self::StudentProduct { .. } => Err(Error::UnsupportedClosedForm("student_product")),
            Self::IsotropicMatern { gamma, s, dim } => {
                let nu = s - dim as f64 / 2.0;
                if nu <= 0.0 {
                    return Err(Error::Parameter(format!("Matérn order must be positive, got ν = {nu}")));
                }
                let order = MATERN_ORDERS
                    .iter()
                    .position(|o| (o - nu).abs() < 1e-12)
                    .ok_or_else(|| {
                        Error::Parameter(format!(
                            "Matérn closed form is available for ν ∈ {{1/2, 3/2, 5/2, 7/2}}, got ν = {nu}"
                        ))
                    })?;
                Ok(ClosedForm::Matern { order: order as u8, inv_gamma: 1.0 / gamma })
            }
            Self::Energy { .. } => Ok(ClosedForm::Energy),
        }
    }

    /// Evaluate k_ω(x, x').
    pub fn kernel(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(Error::Shape(format!(
                "kernel of dimension {} evaluated on vectors of length {} and {}",
                self.dim(),
                x.len(),
                y.len()
            )));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel argument"));
        }
        let cf = self.closed_form()?;
        Ok(cf.eval_pair(x, y))
    }
}

/// A closed-form translation-invariant kernel, evaluated from the single
/// distance it depends on (see [`ClosedForm::metric`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosedForm {
    Gaussian { inv_gamma_sq: f64 },
    Laplacian { inv_gamma: f64 },
    /// `order` indexes [`MATERN_ORDERS`].
    Matern { order: u8, inv_gamma: f64 },
    Energy,
}

/// Which pairwise distance a closed form consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    SquaredL2,
    L1,
    L2,
}

impl ClosedForm {
    pub fn metric(&self) -> DistanceKind {
        match self {
            ClosedForm::Gaussian { .. } => DistanceKind::SquaredL2,
            ClosedForm::Laplacian { .. } => DistanceKind::L1,
            ClosedForm::Matern { .. } | ClosedForm::Energy => DistanceKind::L2,
        }
    }

    /// Kernel value from the distance returned by [`distance`] for this metric.
    #[inline]
    pub fn eval(&self, dist: f64) -> f64 {
        match *self {
            ClosedForm::Gaussian { inv_gamma_sq } => (-dist * inv_gamma_sq).exp(),
            ClosedForm::Laplacian { inv_gamma } => (-dist * inv_gamma).exp(),
            ClosedForm::Matern { order, inv_gamma } => matern_half_integer(order, dist * inv_gamma),
            ClosedForm::Energy => -dist,
        }
    }

    #[inline]
    pub fn eval_pair(&self, x: &[f64], y: &[f64]) -> f64 {
        self.eval(distance(self.metric(), x, y))
    }
}

#[inline]
pub fn distance(kind: DistanceKind, x: &[f64], y: &[f64]) -> f64 {
    match kind {
        DistanceKind::SquaredL2 => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum(),
        DistanceKind::L2 => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        DistanceKind::L1 => x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum(),
    }
}

/// Matérn correlation of order p + 1/2 at scaled lag u = r/γ.
///
/// This is the Fourier pair of (1+γ²‖t‖²)^(−s): the Bessel argument is r/γ
/// with no √(2ν) rescaling.
#[inline]
fn matern_half_integer(p: u8, u: f64) -> f64 {
    let poly = match p {
        0 => 1.0,
        1 => 1.0 + u,
        2 => 1.0 + u + u * u / 3.0,
        _ => 1.0 + u + 0.4 * u * u + u * u * u / 15.0,
    };
    poly * (-u).exp()
}
