//! Small dense convex quadratic programs:
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  l <= A x <= u
//!                 x_lb <= x <= x_ub
//! ```
//!
//! Infinite bounds mark absent sides. Rows with `l == u` are equalities.

mod dual_active_set;
mod kkt;

use nalgebra::{DMatrix, DVector};

pub use kkt::{kkt_residual, KktResidual};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
    pub x_lb: DVector<f64>,
    pub x_ub: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem.
    pub fn new(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a: DMatrix::zeros(0, n),
            l: DVector::zeros(0),
            u: DVector::zeros(0),
            x_lb: DVector::from_element(n, f64::NEG_INFINITY),
            x_ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_constraints(mut self, a: DMatrix<f64>, l: DVector<f64>, u: DVector<f64>) -> Self {
        self.a = a;
        self.l = l;
        self.u = u;
        self
    }

    pub fn with_bounds(mut self, x_lb: DVector<f64>, x_ub: DVector<f64>) -> Self {
        self.x_lb = x_lb;
        self.x_ub = x_ub;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.g.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let c = self.num_constraints();
        let bad = |m: String| Err(Error::Usage(format!("invalid QP: {m}")));
        if self.h.shape() != (n, n) {
            return bad(format!("H is {:?}, expected {n}x{n}", self.h.shape()));
        }
        if self.a.ncols() != n && c > 0 {
            return bad(format!("A has {} columns, expected {n}", self.a.ncols()));
        }
        if self.l.len() != c || self.u.len() != c || self.x_lb.len() != n || self.x_ub.len() != n {
            return bad("bound vector lengths do not match".into());
        }
        if (&self.h - self.h.transpose()).amax() > 1e-10 {
            return bad("H is not symmetric".into());
        }
        if self.h.iter().chain(self.g.iter()).chain(self.a.iter()).any(|v| !v.is_finite()) {
            return bad("non-finite entry in H, g or A".into());
        }
        let sides = self.l.iter().zip(self.u.iter()).chain(self.x_lb.iter().zip(self.x_ub.iter()));
        for (lo, hi) in sides {
            if lo.is_nan() || hi.is_nan() || lo > hi || *lo == f64::INFINITY || *hi == f64::NEG_INFINITY {
                return bad(format!("bounds [{lo}, {hi}] are empty or malformed"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    PrimalInfeasible,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpSettings {
    pub tol_feas: f64,
    pub tol_opt: f64,
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol_feas: 1e-6,
            tol_opt: 1e-6,
            max_iterations: 500,
        }
    }
}

/// Solves a convex QP with the Goldfarb–Idnani dual active-set method.
///
/// `H` must be positive semidefinite; if its Cholesky factorization fails a
/// small multiple of the identity (starting at `1e-9`) is added. An
/// infeasible constraint set is reported through the status, never as an
/// error; errors are reserved for malformed problems.
pub fn solve_qp(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    problem.validate()?;
    let rows = dual_active_set::Rows::from_problem(problem);
    let out = dual_active_set::solve(&problem.h, &problem.g, &rows, settings.max_iterations);
    let primal_residual = kkt::primal_residual(problem, &out.x);

    let mut stationarity = &problem.h * &out.x + &problem.g;
    for (row, mult) in rows.all().zip(out.multipliers.iter()) {
        stationarity -= &row.normal * *mult;
    }
    let dual_residual = stationarity.amax();

    let mut status = out.status;
    if status == QpStatus::Optimal && (primal_residual > settings.tol_feas || dual_residual > settings.tol_opt) {
        // ill-conditioned corner; the iterate is still the best available
        status = QpStatus::MaxIterations;
    }
    Ok(QpSolution {
        x: out.x,
        status,
        iterations: out.iterations,
        primal_residual,
        dual_residual,
    })
}
