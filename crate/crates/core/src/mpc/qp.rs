//! Dense strictly convex QP by the Goldfarb-Idnani dual active-set method:
//! minimize ½xᵀHx + gᵀx subject to Cx ≥ d.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpData {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    /// One constraint per row: c_rowᵀ x ≥ d_row.
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multiplier per constraint row; zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { feas_tol: 1e-9, max_iter: 500 }
    }
}

#[derive(Debug)]
pub enum QpOutcome {
    Solved(QpSolution),
    Infeasible,
}

#[inline]
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

fn rotate_cols(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    for k in 0..m.nrows() {
        let (a, b) = (m[(k, i)], m[(k, j)]);
        m[(k, i)] = c * a + s * b;
        m[(k, j)] = -s * a + c * b;
    }
}

/// Solves the QP. `priority` lists rows to prefer when several are violated,
/// typically the previous step's active set.
pub fn solve(qp: &QpData, opts: &QpOptions, priority: &[usize]) -> Result<QpOutcome> {
    let n = qp.h.nrows();
    let m = qp.c.nrows();
    if qp.h.ncols() != n || qp.g.len() != n || qp.c.ncols() != n || qp.d.len() != m {
        return Err(Error::DimensionMismatch { expected: n, found: qp.g.len() });
    }
    let chol = nalgebra::Cholesky::new(qp.h.clone()).ok_or_else(|| Error::SolverFailure {
        step: None,
        reason: "Hessian is not positive definite".into(),
    })?;
    // J = L⁻ᵀ, so that Jᵀ H J = I.
    let mut j_mat = chol.l().transpose().try_inverse().ok_or_else(|| Error::SolverFailure {
        step: None,
        reason: "singular Hessian factor".into(),
    })?;
    let mut x = -chol.solve(&qp.g);
    let mut r = DMatrix::<f64>::zeros(n, n);
    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut u: Vec<f64> = Vec::with_capacity(n + 1);
    let norms: Vec<f64> = (0..m).map(|i| qp.c.row(i).norm().max(1e-300)).collect();
    let mut is_active = vec![false; m];
    let mut iters = 0usize;

    let slack = |x: &DVector<f64>, i: usize| qp.c.row(i).transpose().dot(x) - qp.d[i];

    loop {
        // Step 1: most violated constraint, previously active rows first.
        let mut pick: Option<(usize, f64)> = None;
        for &i in priority.iter().filter(|&&i| i < m) {
            if is_active[i] {
                continue;
            }
            let s = slack(&x, i) / norms[i];
            if s < -opts.feas_tol && pick.is_none_or(|(_, b)| s < b) {
                pick = Some((i, s));
            }
        }
        if pick.is_none() {
            for i in 0..m {
                if is_active[i] {
                    continue;
                }
                let s = slack(&x, i) / norms[i];
                if s < -opts.feas_tol && pick.is_none_or(|(_, b)| s < b) {
                    pick = Some((i, s));
                }
            }
        }
        let Some((p, _)) = pick else { break };
        let np = qp.c.row(p).transpose();
        let mut sp = slack(&x, p);
        u.push(0.0);

        // Step 2: iterate until p joins the active set.
        loop {
            iters += 1;
            if iters > opts.max_iter {
                return Err(Error::SolverFailure { step: None, reason: format!("no convergence in {} iterations", opts.max_iter) });
            }
            let q = active.len();
            let dvec = j_mat.transpose() * &np;
            let mut z = DVector::<f64>::zeros(n);
            for k in q..n {
                z.axpy(dvec[k], &j_mat.column(k), 1.0);
            }
            let mut rv = vec![0.0; q];
            for i in (0..q).rev() {
                let mut s = dvec[i];
                for k in i + 1..q {
                    s -= r[(i, k)] * rv[k];
                }
                rv[i] = s / r[(i, i)];
            }
            // Partial step limited by dual feasibility.
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for i in 0..q {
                if rv[i] > 1e-14 {
                    let ratio = u[i] / rv[i];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(i);
                    }
                }
            }
            let ztn = z.dot(&np);
            let t2 = if ztn.abs() > 1e-12 * norms[p] * norms[p] { -sp / ztn } else { f64::INFINITY };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Ok(QpOutcome::Infeasible);
            }
            for i in 0..q {
                u[i] -= t * rv[i];
            }
            u[q] += t;
            if t2.is_finite() {
                x.axpy(t, &z, 1.0);
            }
            if t2 <= t1 {
                // Full step: add p.
                let mut dv = dvec;
                for k in (q + 1..n).rev() {
                    let (c, s, h) = givens(dv[k - 1], dv[k]);
                    if s != 0.0 {
                        dv[k - 1] = h;
                        dv[k] = 0.0;
                        rotate_cols(&mut j_mat, k - 1, k, c, s);
                    }
                }
                for i in 0..=q {
                    r[(i, q)] = dv[i];
                }
                active.push(p);
                is_active[p] = true;
                break;
            }
            // Partial step: drop the blocking constraint and retry.
            let l = drop_at.expect("finite t1 has a blocking index");
            is_active[active[l]] = false;
            active.remove(l);
            u.remove(l);
            for col in l..q - 1 {
                for row in 0..n {
                    r[(row, col)] = r[(row, col + 1)];
                }
            }
            for row in 0..n {
                r[(row, q - 1)] = 0.0;
            }
            for k in l..q - 1 {
                let (c, s, h) = givens(r[(k, k)], r[(k + 1, k)]);
                if s == 0.0 {
                    continue;
                }
                r[(k, k)] = h;
                r[(k + 1, k)] = 0.0;
                for col in k + 1..q - 1 {
                    let (a, b) = (r[(k, col)], r[(k + 1, col)]);
                    r[(k, col)] = c * a + s * b;
                    r[(k + 1, col)] = -s * a + c * b;
                }
                rotate_cols(&mut j_mat, k, k + 1, c, s);
            }
            sp = slack(&x, p);
        }
    }

    let mut mult = DVector::zeros(m);
    for (k, &i) in active.iter().enumerate() {
        mult[i] = u[k];
    }
    let grad = &qp.h * &x + &qp.g - qp.c.transpose() * &mult;
    let mut kkt = grad.amax();
    for i in 0..m {
        let s = slack(&x, i);
        kkt = kkt.max((-s).max(0.0)).max((mult[i] * s).abs()).max((-mult[i]).max(0.0));
    }
    let objective = 0.5 * x.dot(&(&qp.h * &x)) + qp.g.dot(&x);
    Ok(QpOutcome::Solved(QpSolution { x, multipliers: mult, active, objective, iterations: iters, kkt_residual: kkt }))
}
