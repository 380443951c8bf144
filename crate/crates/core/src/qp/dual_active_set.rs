//! Goldfarb–Idnani dual active-set method on dense matrices.
//!
//! Works in the transformed space `J = L^-T Q` where `H = L L'` and `Q R`
//! is the QR factorization of the active constraint normals `L^-1 N`.
//! Constraints are added and dropped with Givens rotations.

use nalgebra::{DMatrix, DVector};

use super::{QpProblem, QpStatus};

/// One-sided constraint `normal · x >= rhs` (or `==` for equalities).
#[derive(Clone, Debug)]
pub(super) struct Row {
    pub normal: DVector<f64>,
    pub rhs: f64,
}

pub(super) struct Rows {
    pub equalities: Vec<Row>,
    pub inequalities: Vec<Row>,
}

impl Rows {
    pub fn from_problem(p: &QpProblem) -> Self {
        let n = p.num_vars();
        let mut equalities = Vec::new();
        let mut inequalities = Vec::new();
        let mut push = |normal: DVector<f64>, lo: f64, hi: f64| {
            if lo == hi {
                equalities.push(Row { normal, rhs: lo });
                return;
            }
            if lo.is_finite() {
                inequalities.push(Row {
                    normal: normal.clone(),
                    rhs: lo,
                });
            }
            if hi.is_finite() {
                inequalities.push(Row { normal: -normal, rhs: -hi });
            }
        };
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            push(e, p.x_lb[j], p.x_ub[j]);
        }
        for i in 0..p.num_constraints() {
            push(p.a.row(i).transpose(), p.l[i], p.u[i]);
        }
        Self {
            equalities,
            inequalities,
        }
    }

    /// Equalities first, then inequalities; matches `Outcome::multipliers`.
    pub fn all(&self) -> impl Iterator<Item = &Row> {
        self.equalities.iter().chain(self.inequalities.iter())
    }
}

pub(super) struct Outcome {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// One multiplier per row of `Rows::all()`; zero for inactive rows.
    pub multipliers: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Active {
    Eq(usize),
    In(usize),
}

struct Factors {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    r_norm: f64,
    active: Vec<Active>,
    u: Vec<f64>,
}

impl Factors {
    fn len(&self) -> usize {
        self.active.len()
    }

    /// `z = J2 d2` (primal step direction) and `r = R^-1 d1` (dual step).
    fn directions(&self, d: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = d.len();
        let iq = self.len();
        let mut z = DVector::zeros(n);
        for col in iq..n {
            z.axpy(d[col], &self.j.column(col), 1.0);
        }
        let mut r = DVector::zeros(iq);
        for i in (0..iq).rev() {
            let mut sum = 0.0;
            for k in (i + 1)..iq {
                sum += self.r[(i, k)] * r[k];
            }
            r[i] = (d[i] - sum) / self.r[(i, i)];
        }
        (z, r)
    }

    /// Appends a constraint whose transformed normal is `d = J' n`.
    /// Returns false when it is linearly dependent on the active set.
    fn add(&mut self, d: &mut DVector<f64>) -> bool {
        let n = d.len();
        let iq = self.len();
        for col in ((iq + 1)..n).rev() {
            let (c, s) = (d[col - 1], d[col]);
            let h = c.hypot(s);
            if h == 0.0 {
                continue;
            }
            d[col] = 0.0;
            let (mut cc, mut ss) = (c / h, s / h);
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[col - 1] = -h;
            } else {
                d[col - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in 0..n {
                let t1 = self.j[(k, col - 1)];
                let t2 = self.j[(k, col)];
                let first = t1 * cc + t2 * ss;
                self.j[(k, col - 1)] = first;
                self.j[(k, col)] = xny * (t1 + first) - t2;
            }
        }
        for i in 0..=iq {
            self.r[(i, iq)] = d[i];
        }
        if d[iq].abs() <= f64::EPSILON * self.r_norm {
            for i in 0..=iq {
                self.r[(i, iq)] = 0.0;
            }
            return false;
        }
        self.r_norm = self.r_norm.max(d[iq].abs());
        true
    }

    fn remove(&mut self, pos: usize) {
        let n = self.j.nrows();
        let iq = self.len();
        self.active.remove(pos);
        self.u.remove(pos);
        for col in pos..(iq - 1) {
            for row in 0..n {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..n {
            self.r[(row, iq - 1)] = 0.0;
        }
        let iq = iq - 1;
        for col in pos..iq {
            let (c, s) = (self.r[(col, col)], self.r[(col + 1, col)]);
            let h = c.hypot(s);
            if h == 0.0 {
                continue;
            }
            let (mut cc, mut ss) = (c / h, s / h);
            self.r[(col + 1, col)] = 0.0;
            if cc < 0.0 {
                self.r[(col, col)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(col, col)] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in (col + 1)..iq {
                let t1 = self.r[(col, k)];
                let t2 = self.r[(col + 1, k)];
                let first = t1 * cc + t2 * ss;
                self.r[(col, k)] = first;
                self.r[(col + 1, k)] = xny * (t1 + first) - t2;
            }
            for k in 0..n {
                let t1 = self.j[(k, col)];
                let t2 = self.j[(k, col + 1)];
                let first = t1 * cc + t2 * ss;
                self.j[(k, col)] = first;
                self.j[(k, col + 1)] = xny * (first + t1) - t2;
            }
        }
    }
}

fn factor(h: &DMatrix<f64>) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
    let sym = (h + h.transpose()) * 0.5;
    if let Some(chol) = sym.clone().cholesky() {
        return chol;
    }
    let scale = sym.diagonal().amax().max(1.0);
    let mut eps = 1e-9;
    loop {
        let shifted = &sym + DMatrix::identity(sym.nrows(), sym.ncols()) * (eps * scale);
        if let Some(chol) = shifted.cholesky() {
            return chol;
        }
        eps *= 10.0;
    }
}

pub(super) fn solve(h: &DMatrix<f64>, g: &DVector<f64>, rows: &Rows, max_iterations: usize) -> Outcome {
    let n = g.len();
    let n_eq = rows.equalities.len();
    let n_rows = n_eq + rows.inequalities.len();
    let chol = factor(h);
    let l = chol.l();
    let j = l
        .transpose()
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .expect("Cholesky factor has a positive diagonal");
    let mut x = -chol.solve(g);
    let mut fac = Factors {
        j,
        r: DMatrix::zeros(n, n),
        r_norm: 1.0,
        active: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
    };
    let mut iterations = 0;

    let finish = |x: DVector<f64>, status, iterations, fac: &Factors| {
        let mut multipliers = vec![0.0; n_rows];
        for (a, u) in fac.active.iter().zip(&fac.u) {
            match a {
                Active::Eq(k) => multipliers[*k] = *u,
                Active::In(k) => multipliers[n_eq + *k] = *u,
            }
        }
        Outcome {
            x,
            status,
            iterations,
            multipliers,
        }
    };

    for (k, row) in rows.equalities.iter().enumerate() {
        let mut d = fac.j.transpose() * &row.normal;
        let (z, r) = fac.directions(&d);
        let denom = z.dot(&row.normal);
        let step = if z.norm() > f64::EPSILON { (row.rhs - row.normal.dot(&x)) / denom } else { 0.0 };
        x.axpy(step, &z, 1.0);
        for (ui, ri) in fac.u.iter_mut().zip(r.iter()) {
            *ui -= step * ri;
        }
        if !fac.add(&mut d) {
            return finish(x, QpStatus::PrimalInfeasible, iterations, &fac);
        }
        fac.active.push(Active::Eq(k));
        fac.u.push(step);
    }

    let is_active = |fac: &Factors, k: usize| fac.active.contains(&Active::In(k));
    loop {
        // most violated inactive inequality
        let mut chosen: Option<(usize, f64)> = None;
        for (k, row) in rows.inequalities.iter().enumerate() {
            if is_active(&fac, k) {
                continue;
            }
            let slack = row.normal.dot(&x) - row.rhs;
            let tol = 1e-12 * (1.0 + row.rhs.abs() + row.normal.amax() * x.amax());
            if slack < -tol && chosen.is_none_or(|(_, s)| slack < s) {
                chosen = Some((k, slack));
            }
        }
        let Some((p, mut slack)) = chosen else {
            return finish(x, QpStatus::Optimal, iterations, &fac);
        };
        let np = &rows.inequalities[p].normal;
        let mut u_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iterations {
                return finish(x, QpStatus::MaxIterations, iterations - 1, &fac);
            }
            let mut d = fac.j.transpose() * np;
            let (z, r) = fac.directions(&d);

            // largest dual step that keeps active inequality multipliers >= 0
            let mut partial: Option<(usize, f64)> = None;
            for (pos, a) in fac.active.iter().enumerate() {
                if let Active::In(_) = a {
                    if r[pos] > 0.0 {
                        let t = fac.u[pos] / r[pos];
                        if partial.is_none_or(|(_, best)| t < best) {
                            partial = Some((pos, t));
                        }
                    }
                }
            }
            let t1 = partial.map_or(f64::INFINITY, |(_, t)| t);
            let zn = z.dot(np);
            let t2 = if z.amax() > f64::EPSILON * 1e2 && zn > 0.0 { -slack / zn } else { f64::INFINITY };
            let t = t1.min(t2);
            if !t.is_finite() {
                return finish(x, QpStatus::PrimalInfeasible, iterations, &fac);
            }
            for (ui, ri) in fac.u.iter_mut().zip(r.iter()) {
                *ui -= t * ri;
            }
            u_p += t;
            if t2.is_infinite() {
                // dual-only step: drop the blocking constraint and retry
                let (pos, _) = partial.expect("finite t1");
                fac.remove(pos);
                continue;
            }
            x.axpy(t, &z, 1.0);
            if t2 <= t1 {
                if !fac.add(&mut d) {
                    return finish(x, QpStatus::PrimalInfeasible, iterations, &fac);
                }
                fac.active.push(Active::In(p));
                fac.u.push(u_p);
                break;
            }
            let (pos, _) = partial.expect("partial step has a blocking constraint");
            fac.remove(pos);
            slack = np.dot(&x) - rows.inequalities[p].rhs;
        }
    }
}
