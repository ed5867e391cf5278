//! Dense convex quadratic programs
//!
//! ```text
//! minimize   wᵀQw + qᵀw
//! subject to Aw = b,  lower ≤ w ≤ upper
//! ```
//!
//! solved by ADMM with the equality constraints folded into the linear
//! subproblem, followed by an active-set polish that recovers a high-accuracy
//! KKT point.

mod admm;
mod linsys;
mod polish;
mod project;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use admm::{solve_qp, solve_qp_warm};
pub use project::project_feasible;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    quad: DMatrix<f64>,
    lin: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl QpProblem {
    /// Problem with nonnegativity bounds. `quad` is symmetrized.
    pub fn new(quad: DMatrix<f64>, lin: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let n = lin.len();
        Self::with_bounds(quad, lin, a, b, DVector::zeros(n), DVector::from_element(n, f64::INFINITY))
    }

    pub fn with_bounds(
        quad: DMatrix<f64>,
        lin: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        let n = lin.len();
        if quad.shape() != (n, n) {
            return Err(Error::Shape(format!("Q is {:?} but q has length {n}", quad.shape())));
        }
        if a.ncols() != n || a.nrows() != b.len() {
            return Err(Error::Shape(format!("A is {:?} with b of length {} and n = {n}", a.shape(), b.len())));
        }
        if lower.len() != n || upper.len() != n {
            return Err(Error::Shape("bounds must have length n".into()));
        }
        if quad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Q"));
        }
        if lin.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("q"));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("equality constraints"));
        }
        if lower.iter().chain(upper.iter()).any(|v| v.is_nan()) || lower.iter().any(|v| *v == f64::INFINITY) {
            return Err(Error::NonFinite("bounds"));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(Error::Parameter("lower bound exceeds upper bound".into()));
        }
        let m = a.nrows();
        if m > n {
            return Err(Error::Parameter(format!("{m} equality constraints for {n} variables")));
        }
        if m > 0 {
            let sv = a.clone().singular_values();
            let max = sv.max();
            if max == 0.0 || sv.min() <= 1e-12 * max {
                return Err(Error::Parameter("equality constraint matrix is rank deficient".into()));
            }
        }
        let quad = (&quad + quad.transpose()) * 0.5;
        Ok(Self { quad, lin, a, b, lower, upper })
    }

    pub fn n(&self) -> usize {
        self.lin.len()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn quad(&self) -> &DMatrix<f64> {
        &self.quad
    }

    pub fn lin(&self) -> &DVector<f64> {
        &self.lin
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    /// wᵀQw + qᵀw.
    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        w.dot(&(&self.quad * w)) + self.lin.dot(w)
    }

    /// Same constraints with the objective multiplied by `c`.
    pub fn scale_objective(&self, c: f64) -> Self {
        Self { quad: &self.quad * c, lin: &self.lin * c, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub adaptive_rho: bool,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { eps_abs: 1e-6, eps_rel: 1e-6, max_iter: 20_000, rho: 0.1, adaptive_rho: true, polish: true }
    }
}

impl QpSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_abs > 0.0 && self.eps_rel > 0.0 && self.eps_abs.is_finite() && self.eps_rel.is_finite()) {
            return Err(Error::Parameter("solver tolerances must be positive".into()));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Parameter("penalty rho must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub w: Vec<f64>,
    pub status: QpStatus,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub polished: bool,
}

/// KKT residuals of a candidate point, with the magnitudes used to make them
/// relative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    pub primal_scale: f64,
    pub dual_scale: f64,
}

impl KktResiduals {
    pub fn within(&self, eps_abs: f64, eps_rel: f64) -> bool {
        self.primal <= eps_abs + eps_rel * self.primal_scale && self.dual <= eps_abs + eps_rel * self.dual_scale
    }
}

fn amax(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Primal infeasibility, stationarity violation and complementarity at `w`.
///
/// The equality multipliers are the least-squares fit of −(2Qw + q) over the
/// coordinates strictly inside the box; a coordinate counts as at a bound when
/// it lies within 10⁻⁷·max(1, ‖w‖∞) of it.
pub fn kkt_residuals(problem: &QpProblem, w: &DVector<f64>) -> KktResiduals {
    let n = problem.n();
    let (l, u) = (&problem.lower, &problem.upper);
    let aw = &problem.a * w;
    let mut primal = amax(&(&aw - &problem.b));
    for i in 0..n {
        primal = primal.max(l[i] - w[i]).max(w[i] - u[i]);
    }
    let qw = &problem.quad * w * 2.0;
    let g = &qw + &problem.lin;
    let tol = 1e-7 * amax(w).max(1.0);
    let at_lower: Vec<bool> = (0..n).map(|i| l[i].is_finite() && w[i] - l[i] <= tol).collect();
    let at_upper: Vec<bool> = (0..n).map(|i| u[i].is_finite() && u[i] - w[i] <= tol).collect();
    let free: Vec<usize> = (0..n).filter(|&i| !at_lower[i] && !at_upper[i]).collect();
    let m = problem.m();
    let nu = if m == 0 {
        DVector::zeros(0)
    } else {
        let rows: Vec<usize> = if free.is_empty() { (0..n).collect() } else { free.clone() };
        let af = DMatrix::from_fn(rows.len(), m, |r, k| problem.a[(k, rows[r])]);
        let gf = DVector::from_fn(rows.len(), |r, _| -g[rows[r]]);
        af.svd(true, true).solve(&gf, 1e-14).unwrap_or_else(|_| DVector::zeros(m))
    };
    let atnu = problem.a.tr_mul(&nu);
    let r = &g + &atnu;
    let mut dual = 0.0f64;
    let mut comp = 0.0f64;
    for i in 0..n {
        let v = if at_lower[i] && at_upper[i] {
            0.0
        } else if at_lower[i] {
            (-r[i]).max(0.0)
        } else if at_upper[i] {
            r[i].max(0.0)
        } else {
            r[i].abs()
        };
        dual = dual.max(v);
        let mut c = 0.0;
        if l[i].is_finite() {
            c += r[i].max(0.0) * (w[i] - l[i]).max(0.0);
        }
        if u[i].is_finite() {
            c += (-r[i]).max(0.0) * (u[i] - w[i]).max(0.0);
        }
        comp = comp.max(c);
    }
    KktResiduals {
        primal,
        dual,
        complementarity: comp,
        primal_scale: amax(&aw).max(amax(&problem.b)).max(amax(w)),
        dual_scale: amax(&qw).max(amax(&problem.lin)).max(amax(&atnu)),
    }
}
