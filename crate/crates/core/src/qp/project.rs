use nalgebra::{DMatrix, DVector};

use super::QpProblem;

/// Affine projector x ↦ x − Aᵀ(AAᵀ)⁻¹(Ax − b).
pub(crate) struct AffineProjector {
    a: DMatrix<f64>,
    b: DVector<f64>,
    gram_inv: DMatrix<f64>,
}

impl AffineProjector {
    pub fn new(a: &DMatrix<f64>, b: &DVector<f64>) -> Self {
        let gram = a * a.transpose();
        let gram_inv = gram.try_inverse().unwrap_or_else(|| DMatrix::zeros(a.nrows(), a.nrows()));
        Self { a: a.clone(), b: b.clone(), gram_inv }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.a.nrows() == 0 {
            return x.clone();
        }
        let eta = &self.gram_inv * (&self.a * x - &self.b);
        x - self.a.tr_mul(&eta)
    }

    /// Aᵀη.
    pub fn lift(&self, eta: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(eta)
    }

    /// Least-squares coefficients η with Aᵀη ≈ v.
    pub fn coefficients(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.gram_inv * (&self.a * v)
    }
}

pub(crate) fn clip(x: &mut DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

/// Euclidean projection of `v` onto {Aw = b, lower ≤ w ≤ upper} by Dykstra's
/// alternating projections. The result is exactly inside the box; the
/// equality residual is below `tol` unless the set is empty.
pub fn project_feasible(problem: &QpProblem, v: &DVector<f64>, tol: f64, max_iter: usize) -> DVector<f64> {
    let aff = AffineProjector::new(problem.a(), problem.b());
    let n = v.len();
    let mut x = v.clone();
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    for _ in 0..max_iter {
        let y = aff.apply(&(&x + &p));
        p = &x + &p - &y;
        let mut x_new = &y + &q;
        clip(&mut x_new, problem.lower(), problem.upper());
        q = &y + &q - &x_new;
        let step = (&x_new - &x).amax();
        x = x_new;
        let eq = (problem.a() * &x - problem.b()).amax();
        if step <= tol && eq <= tol {
            break;
        }
    }
    x
}
