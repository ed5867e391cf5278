use nalgebra::{DMatrix, DVector};

use super::linsys::EqSystem;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Free,
    Lower,
    Upper,
}

/// Solve the equality-constrained problem on a guessed active set and repair
/// the guess with primal-dual active-set corrections.
///
/// `p` is the Hessian of ½xᵀPx + qᵀx; `z` and `y` are the ADMM iterate and its
/// bound multiplier, which seed the active set (lower-active when
/// z − l < −y, upper-active when u − z < y). Returns a box-feasible point, or
/// `None` when the reduced systems are singular or the corrections cycle.
#[allow(clippy::too_many_arguments)]
pub(crate) fn polish(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    z: &DVector<f64>,
    y: &DVector<f64>,
    max_rounds: usize,
) -> Option<DVector<f64>> {
    let n = q.len();
    let m = a.nrows();
    let mut side: Vec<Side> = (0..n)
        .map(|i| {
            let lo = lower[i].is_finite() && z[i] - lower[i] < -y[i];
            let hi = upper[i].is_finite() && upper[i] - z[i] < y[i];
            match (lo, hi) {
                (true, true) if z[i] - lower[i] <= upper[i] - z[i] => Side::Lower,
                (true, true) => Side::Upper,
                (true, false) => Side::Lower,
                (false, true) => Side::Upper,
                _ => Side::Free,
            }
        })
        .collect();
    let xscale = z.amax().max(1.0);
    let ptol = 1e-10 * xscale;
    for _ in 0..max_rounds {
        let free: Vec<usize> = (0..n).filter(|&i| side[i] == Side::Free).collect();
        let mut x = DVector::from_fn(n, |i, _| match side[i] {
            Side::Lower => lower[i],
            Side::Upper => upper[i],
            Side::Free => 0.0,
        });
        let nf = free.len();
        let px_fixed = p * &x;
        let nu = if nf > 0 {
            let hff = DMatrix::from_fn(nf, nf, |r, c| p[(free[r], free[c])]);
            let af = DMatrix::from_fn(m, nf, |r, c| a[(r, free[c])]);
            let rhs = DVector::from_fn(nf, |r, _| -(q[free[r]] + px_fixed[free[r]]));
            let bf = b - a * &x;
            let start = DVector::from_fn(nf, |r, _| z[free[r]]);
            let (xf, nu) = refined_solve(&hff, &af, &rhs, &bf, &start)?;
            if xf.iter().chain(nu.iter()).any(|v| !v.is_finite()) {
                return None;
            }
            for (r, &i) in free.iter().enumerate() {
                x[i] = xf[r];
            }
            nu
        } else {
            let resid = a * &x - b;
            if resid.amax() > ptol {
                return None;
            }
            let g = &px_fixed + q;
            let gram = a * a.transpose();
            gram.try_inverse()? * (a * -g)
        };
        let grad = p * &x + q + a.tr_mul(&nu);
        let dtol = 1e-10 * grad.amax().max(q.amax()).max(1e-300);
        let mut changed = false;
        for i in 0..n {
            let next = match side[i] {
                Side::Free if x[i] < lower[i] - ptol => Side::Lower,
                Side::Free if x[i] > upper[i] + ptol => Side::Upper,
                Side::Lower if grad[i] < -dtol => Side::Free,
                Side::Upper if grad[i] > dtol => Side::Free,
                s => s,
            };
            if next != side[i] {
                side[i] = next;
                changed = true;
            }
        }
        if !changed {
            for i in 0..n {
                x[i] = x[i].clamp(lower[i], upper[i]);
            }
            return Some(x);
        }
    }
    None
}

/// Solve [H Aᵀ; A 0][x; ν] = [r; b] through the regularized matrix with H + δI
/// and iterative refinement against the exact one. The refinement is a
/// proximal-point iteration started at `start`, so singular but consistent
/// systems return the solution reached from the current iterate rather than an
/// arbitrary one.
fn refined_solve(
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    r: &DVector<f64>,
    b: &DVector<f64>,
    start: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let scale = h.diagonal().amax().max(1e-300);
    let delta = REGULARIZATION * scale;
    let mut hreg = h.clone();
    for i in 0..hreg.nrows() {
        hreg[(i, i)] += delta;
    }
    let sys = EqSystem::new(hreg, a)?;
    let (mut x, mut nu) = sys.solve(&(r + start * delta), b);
    let target = 1e-14 * r.amax().max(b.amax()).max(scale);
    for _ in 0..REFINEMENT_STEPS {
        let res_r = r - h * &x - a.tr_mul(&nu);
        let res_b = b - a * &x;
        if res_r.amax().max(res_b.amax()) <= target {
            break;
        }
        let (dx, dnu) = sys.solve(&res_r, &res_b);
        x += dx;
        nu += dnu;
    }
    Some((x, nu))
}

const REGULARIZATION: f64 = 1e-9;
const REFINEMENT_STEPS: usize = 30;
