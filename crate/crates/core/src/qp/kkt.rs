//! Solver-independent optimality check.
//!
//! The stationarity residual is recomputed from scratch: multipliers for the
//! nearly-active constraints are fitted by non-negative least squares, so the
//! result does not depend on anything the solver reports.

use nalgebra::{DMatrix, DVector};

use super::QpProblem;

/// Residuals of the first-order optimality conditions at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktResidual {
    /// Largest constraint or bound violation.
    pub primal: f64,
    /// `min_{mu >= 0} |H x + g - N mu|_inf` over the active normals `N`.
    pub stationarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.primal.max(self.stationarity)
    }
}

pub(super) fn primal_residual(p: &QpProblem, x: &DVector<f64>) -> f64 {
    let ax = &p.a * x;
    let rows = ax.iter().zip(p.l.iter().zip(p.u.iter()));
    let bounds = x.iter().zip(p.x_lb.iter().zip(p.x_ub.iter()));
    rows.chain(bounds)
        .map(|(v, (lo, hi))| (lo - v).max(v - hi).max(0.0))
        .fold(0.0, f64::max)
}

/// Distance of `x` from satisfying the KKT conditions of `p`.
///
/// A side is treated as active when its slack is at most `1e-6` (scaled by
/// the bound magnitude); equalities contribute both signs.
pub fn kkt_residual(p: &QpProblem, x: &DVector<f64>) -> KktResidual {
    let n = p.num_vars();
    let mut normals: Vec<DVector<f64>> = Vec::new();
    let mut consider = |normal: DVector<f64>, value: f64, lo: f64, hi: f64| {
        let near = |b: f64| (value - b).abs() <= 1e-6 * (1.0 + b.abs());
        if lo.is_finite() && near(lo) {
            normals.push(normal.clone());
        }
        if hi.is_finite() && near(hi) {
            normals.push(-normal);
        }
    };
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        consider(e, x[j], p.x_lb[j], p.x_ub[j]);
    }
    let ax = &p.a * x;
    for i in 0..p.num_constraints() {
        consider(p.a.row(i).transpose(), ax[i], p.l[i], p.u[i]);
    }

    let grad = &p.h * x + &p.g;
    let stationarity = if normals.is_empty() {
        grad.amax()
    } else {
        let n_mat = DMatrix::from_columns(&normals);
        let mu = nnls(&n_mat, &grad);
        (grad - n_mat * mu).amax()
    };
    KktResidual {
        primal: primal_residual(p, x),
        stationarity,
    }
}

/// Lawson–Hanson active-set NNLS: `argmin_{x >= 0} |A x - b|_2`.
pub(crate) fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let m = a.ncols();
    let mut x = DVector::zeros(m);
    let mut passive = vec![false; m];
    let tol = 1e-12 * (1.0 + a.amax() * b.amax());

    let lstsq = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..m).filter(|&j| passive[j]).collect();
        let cols: Vec<_> = idx.iter().map(|&j| a.column(j).into_owned()).collect();
        let sub = DMatrix::from_columns(&cols);
        let sol = sub.svd(true, true).solve(b, 1e-14).expect("SVD computed with U and V");
        let mut full = DVector::zeros(m);
        for (k, &j) in idx.iter().enumerate() {
            full[j] = sol[k];
        }
        full
    };

    for _ in 0..(3 * m + 10) {
        let w = a.transpose() * (b - a * &x);
        let Some(t) = (0..m).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j])) else {
            break;
        };
        passive[t] = true;
        for _ in 0..(3 * m + 10) {
            if !passive.iter().any(|&p| p) {
                break;
            }
            let s = lstsq(&passive);
            if (0..m).filter(|&j| passive[j]).all(|j| s[j] > 0.0) {
                x = s;
                break;
            }
            let alpha = (0..m)
                .filter(|&j| passive[j] && s[j] <= 0.0)
                .map(|j| x[j] / (x[j] - s[j]))
                .fold(f64::INFINITY, f64::min);
            x += (s - &x) * alpha;
            for j in 0..m {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
    x
}
