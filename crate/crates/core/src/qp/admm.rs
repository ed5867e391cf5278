use nalgebra::{DMatrix, DVector};

use super::linsys::EqSystem;
use super::polish::polish;
use super::project::{clip, project_feasible, AffineProjector};
use super::{kkt_residuals, QpProblem, QpSettings, QpSolution, QpStatus};
use crate::error::{Error, Result};

const ALPHA: f64 = 1.6;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const ADAPT_EVERY: usize = 50;
const STAGNATION_WINDOW: usize = 2000;
const INFEASIBLE_CHECK_EVERY: usize = 25;
const EPS_INFEASIBLE: f64 = 1e-6;
const DUAL_DIVERGENCE: f64 = 1e10;
const POLISH_ROUNDS: usize = 25;

pub fn solve_qp(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    solve_qp_warm(problem, settings, None)
}

/// As [`solve_qp`], starting the iteration from `warm` (projected onto the box).
pub fn solve_qp_warm(problem: &QpProblem, settings: &QpSettings, warm: Option<&DVector<f64>>) -> Result<QpSolution> {
    settings.validate()?;
    let n = problem.n();
    if let Some(w) = warm {
        if w.len() != n {
            return Err(Error::Shape(format!("warm start has length {} for n = {n}", w.len())));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("warm start"));
        }
    }
    // Normalize the cost so that penalties and tolerances see O(1) data; the
    // minimizer is unchanged.
    let col_mean = if n == 0 {
        0.0
    } else {
        problem.quad().column_iter().map(|c| 2.0 * c.amax()).sum::<f64>() / n as f64
    };
    let s = col_mean.max(problem.lin().amax());
    let c = if s > 0.0 && s.is_finite() { 1.0 / s } else { 1.0 };
    let scaled = problem.scale_objective(c);
    let mut solver = Admm::new(&scaled, settings, warm)?;
    let (x, status, iterations, polished) = solver.run()?;
    let w = DVector::from_column_slice(x.as_slice());
    let kkt = kkt_residuals(problem, &w);
    Ok(QpSolution {
        objective: problem.objective(&w),
        w: x.as_slice().to_vec(),
        status,
        primal_residual: kkt.primal,
        dual_residual: kkt.dual,
        iterations,
        polished,
    })
}

struct Admm<'a> {
    prob: &'a QpProblem,
    settings: &'a QpSettings,
    p: DMatrix<f64>,
    x: DVector<f64>,
    z: DVector<f64>,
    u: DVector<f64>,
    rho: f64,
    sys: EqSystem,
}

impl<'a> Admm<'a> {
    fn new(prob: &'a QpProblem, settings: &'a QpSettings, warm: Option<&DVector<f64>>) -> Result<Self> {
        let n = prob.n();
        let p = prob.quad() * 2.0;
        let mut z = warm.cloned().unwrap_or_else(|| DVector::zeros(n));
        clip(&mut z, prob.lower(), prob.upper());
        let rho = settings.rho;
        let sys = factor(&p, prob.a(), rho)?;
        Ok(Self { prob, settings, p, x: z.clone(), z, u: DVector::zeros(n), rho, sys })
    }

    fn set_rho(&mut self, rho: f64) -> Result<()> {
        let rho = rho.clamp(RHO_MIN, RHO_MAX);
        self.u *= self.rho / rho;
        self.rho = rho;
        self.sys = factor(&self.p, self.prob.a(), rho)?;
        Ok(())
    }

    fn try_polish(&self) -> Option<DVector<f64>> {
        let y = &self.u * self.rho;
        let x = polish(
            &self.p,
            self.prob.lin(),
            self.prob.a(),
            self.prob.b(),
            self.prob.lower(),
            self.prob.upper(),
            &self.z,
            &y,
            POLISH_ROUNDS,
        )?;
        let kkt = kkt_residuals(self.prob, &x);
        let (ea, er) = (self.settings.eps_abs, self.settings.eps_rel);
        (kkt.within(ea, er) && kkt.complementarity <= ea + er * kkt.dual_scale).then_some(x)
    }

    /// Returns (point, status, iterations, polished).
    fn run(&mut self) -> Result<(DVector<f64>, QpStatus, usize, bool)> {
        let (ea, er) = (self.settings.eps_abs, self.settings.eps_rel);
        let q = self.prob.lin().clone();
        let b = self.prob.b().clone();
        let (lower, upper) = (self.prob.lower().clone(), self.prob.upper().clone());
        let aff = AffineProjector::new(self.prob.a(), &b);
        let mut polish_gate = 1e3;
        let mut best_dual = f64::INFINITY;
        let mut last_improve = 0;
        let mut restarted = false;
        let mut certificate_streak = 0;
        let mut k = 0;
        while k < self.settings.max_iter {
            k += 1;
            let mut rhs = (&self.z - &self.u) * self.rho;
            rhs -= &q;
            let (xn, nu) = self.sys.solve(&rhs, &b);
            if xn.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("solver iterate"));
            }
            let xhat = &xn * ALPHA + &self.z * (1.0 - ALPHA);
            let z_old = std::mem::replace(&mut self.z, &xhat + &self.u);
            clip(&mut self.z, &lower, &upper);
            let du = &xhat - &self.z;
            let u_old = self.u.clone();
            self.u += &du;
            self.x = xn;

            // Residuals of the current iterate. Stationarity uses the identity
            // Px + q + Aᵀν = ρ(z_old − u_old − x) from the linear step.
            let prim = (&self.x - &self.z).amax();
            let dual = ((&z_old - &self.x + &du) * self.rho).amax();
            let atnu = self.prob.a().tr_mul(&nu);
            let px = (&z_old - &u_old - &self.x) * self.rho - &q - &atnu;
            let pscale = self.x.amax().max(self.z.amax());
            let dscale = px.amax().max(q.amax()).max(atnu.amax()).max(self.u.amax() * self.rho);
            let rp = prim / (ea + er * pscale);
            let rd = dual / (ea + er * dscale);

            if rp <= 1.0 && rd <= 1.0 {
                if self.settings.polish {
                    if let Some(x) = self.try_polish() {
                        return Ok((x, QpStatus::Solved, k, true));
                    }
                }
                return Ok((self.z.clone(), QpStatus::Solved, k, false));
            }
            if self.settings.polish && rp.max(rd) <= polish_gate {
                if let Some(x) = self.try_polish() {
                    return Ok((x, QpStatus::Solved, k, true));
                }
                polish_gate = rp.max(rd) / 10.0;
            }

            if (self.u.amax() * self.rho) > DUAL_DIVERGENCE {
                return Ok((self.z.clone(), QpStatus::Infeasible, k, false));
            }
            if k >= 2 * INFEASIBLE_CHECK_EVERY && k % INFEASIBLE_CHECK_EVERY == 0 {
                if infeasibility_certificate(&aff, &du, &b, &lower, &upper, pscale) {
                    certificate_streak += 1;
                    if certificate_streak >= 2 {
                        return Ok((self.z.clone(), QpStatus::Infeasible, k, false));
                    }
                } else {
                    certificate_streak = 0;
                }
            }

            if rd < 0.99 * best_dual {
                best_dual = rd;
                last_improve = k;
            } else if k - last_improve >= STAGNATION_WINDOW {
                if restarted {
                    log::warn!("ADMM stagnated after a restart; switching to projected gradient");
                    let x = self.projected_gradient(self.settings.max_iter - k);
                    let kkt = kkt_residuals(self.prob, &x);
                    let status = if kkt.within(ea, er) { QpStatus::Solved } else { QpStatus::MaxIter };
                    return Ok((x, status, self.settings.max_iter, false));
                }
                log::debug!("ADMM dual residual stagnated at iteration {k}; restarting with a larger penalty");
                restarted = true;
                last_improve = k;
                best_dual = rd;
                self.set_rho(self.rho * 10.0)?;
                continue;
            }

            if self.settings.adaptive_rho && k % ADAPT_EVERY == 0 {
                let ratio = ((prim / pscale.max(1e-10)) / (dual / dscale.max(1e-10)).max(1e-300)).sqrt();
                let target = (self.rho * ratio).clamp(RHO_MIN, RHO_MAX);
                if target > 5.0 * self.rho || target < 0.2 * self.rho {
                    self.set_rho(target)?;
                }
            }
        }
        if self.settings.polish {
            if let Some(x) = self.try_polish() {
                return Ok((x, QpStatus::Solved, k, true));
            }
        }
        Ok((self.z.clone(), QpStatus::MaxIter, k, false))
    }

    /// Projected gradient descent with Armijo backtracking on the feasible set.
    fn projected_gradient(&self, budget: usize) -> DVector<f64> {
        let prob = self.prob;
        let f = |w: &DVector<f64>| prob.objective(w);
        let mut x = project_feasible(prob, &self.z, 1e-12, 10_000);
        let mut fx = f(&x);
        let mut step = 1.0 / self.p.amax().max(1e-12);
        for _ in 0..budget.clamp(1, 5_000) {
            let g = &self.p * &x + prob.lin();
            let mut accepted = false;
            for _ in 0..50 {
                let cand = project_feasible(prob, &(&x - &g * step), 1e-12, 10_000);
                let d = &cand - &x;
                let fc = f(&cand);
                if fc <= fx + g.dot(&d) + d.norm_squared() / (2.0 * step) {
                    let moved = d.amax();
                    x = cand;
                    fx = fc;
                    accepted = true;
                    step *= 1.5;
                    if moved <= 1e-12 * x.amax().max(1.0) {
                        return x;
                    }
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        x
    }
}

fn factor(p: &DMatrix<f64>, a: &DMatrix<f64>, rho: f64) -> Result<EqSystem> {
    let mut h = p.clone();
    for i in 0..h.nrows() {
        h[(i, i)] += rho;
    }
    EqSystem::new(h, a).ok_or_else(|| Error::Parameter("singular KKT system in the linear step".into()))
}

/// Separating-hyperplane test: v = δu ∈ range(Aᵀ), v = Aᵀη, and every box point
/// satisfies vᵀz < ηᵀb, which equals vᵀx for every x with Ax = b.
fn infeasibility_certificate(
    aff: &AffineProjector,
    du: &DVector<f64>,
    b: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    scale: f64,
) -> bool {
    let vnorm = du.amax();
    if vnorm == 0.0 || b.is_empty() {
        return false;
    }
    let eta = aff.coefficients(du);
    let resid = (du - aff.lift(&eta)).lp_norm(1);
    if resid > EPS_INFEASIBLE * vnorm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..du.len() {
        let v = du[i];
        let bound = if v > 0.0 {
            upper[i]
        } else if v < 0.0 {
            lower[i]
        } else {
            continue;
        };
        if !bound.is_finite() {
            return false;
        }
        support += v * bound;
    }
    eta.dot(b) - support > resid * (1.0 + scale) + EPS_INFEASIBLE * vnorm * (1.0 + scale)
}
