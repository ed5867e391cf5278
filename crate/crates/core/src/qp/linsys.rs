use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

/// Factorized solver for the equality-constrained system
///
/// ```text
/// [ H  Aᵀ ] [x]   [r]
/// [ A  0  ] [ν] = [b]
/// ```
///
/// H only needs to be positive definite on the null space of A. The system is
/// solved through H + μAᵀA (which leaves the solution unchanged once Ax = b is
/// enforced), increasing μ until a Cholesky factorization succeeds, with an LU
/// factorization of the full block matrix as the last resort.
pub(crate) struct EqSystem {
    n: usize,
    a: DMatrix<f64>,
    mu: f64,
    factor: Factor,
}

enum Factor {
    Chol {
        chol: Cholesky<f64, Dyn>,
        // H⁻¹Aᵀ and (A H⁻¹ Aᵀ)⁻¹
        hinv_at: DMatrix<f64>,
        s_inv: DMatrix<f64>,
    },
    Lu(LU<f64, Dyn, Dyn>),
}

impl EqSystem {
    pub fn new(h: DMatrix<f64>, a: &DMatrix<f64>) -> Option<Self> {
        let n = h.nrows();
        let m = a.nrows();
        let scale = h.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        // Augmenting by μAᵀA with μ‖aᵢ‖² ≈ max diag(H) keeps the Schur
        // complement well conditioned even when H is singular on range(Aᵀ).
        let row_norm = a.row_iter().map(|r| r.norm_squared()).fold(0.0f64, f64::max);
        let ata = if m > 0 { Some(a.transpose() * a) } else { None };
        let attempts = if m > 0 { 8 } else { 1 };
        for attempt in 0..attempts {
            let mut ha = h.clone();
            let mut mu = 0.0;
            if let Some(ata) = &ata {
                mu = scale / row_norm * 10f64.powi(attempt);
                ha += ata * mu;
            }
            if let Some(chol) = ha.cholesky() {
                if m == 0 {
                    return Some(Self {
                        n,
                        a: a.clone(),
                        mu,
                        factor: Factor::Chol { chol, hinv_at: DMatrix::zeros(n, 0), s_inv: DMatrix::zeros(0, 0) },
                    });
                }
                let hinv_at = chol.solve(&a.transpose());
                let s = a * &hinv_at;
                if let Some(s_inv) = s.try_inverse() {
                    if s_inv.iter().all(|v| v.is_finite()) {
                        return Some(Self { n, a: a.clone(), mu, factor: Factor::Chol { chol, hinv_at, s_inv } });
                    }
                }
            }
        }
        let mut kkt = DMatrix::<f64>::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        if m > 0 {
            kkt.view_mut((0, n), (n, m)).copy_from(&a.transpose());
            kkt.view_mut((n, 0), (m, n)).copy_from(a);
        }
        let lu = kkt.lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Self { n, a: a.clone(), mu: 0.0, factor: Factor::Lu(lu) })
    }

    /// Solve for (x, ν) given the right-hand sides r and b.
    pub fn solve(&self, r: &DVector<f64>, b: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        match &self.factor {
            Factor::Chol { chol, hinv_at, s_inv } => {
                let mut h = r.clone();
                if self.mu != 0.0 {
                    h.gemv_tr(self.mu, &self.a, b, 1.0);
                }
                chol.solve_mut(&mut h);
                if self.a.nrows() == 0 {
                    return (h, DVector::zeros(0));
                }
                let nu = s_inv * (&self.a * &h - b);
                h.gemv(-1.0, hinv_at, &nu, 1.0);
                (h, nu)
            }
            Factor::Lu(lu) => {
                let m = self.a.nrows();
                let mut rhs = DVector::<f64>::zeros(self.n + m);
                rhs.rows_mut(0, self.n).copy_from(r);
                rhs.rows_mut(self.n, m).copy_from(b);
                let sol = lu.solve(&rhs).unwrap_or_else(|| DVector::from_element(self.n + m, f64::NAN));
                (sol.rows(0, self.n).into_owned(), sol.rows(self.n, m).into_owned())
            }
        }
    }
}
