//! Box-constrained quasi-Newton ascent, shared by hyperparameter and
//! inducing-point training.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AscentOptions {
    pub max_iters: usize,
    /// Stop when the projected gradient's largest component drops below this.
    pub tol: f64,
    /// Largest move of any coordinate in one iteration.
    pub max_step: f64,
    /// Stop after three consecutive iterations gaining less than
    /// `ftol·(1 + |f|)`.
    pub ftol: f64,
}

#[derive(Debug, Clone)]
pub struct AscentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub iters: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((xi, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *xi = xi.clamp(*l, *h);
    }
}

fn projected_grad_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&xi, &gi), (&l, &h))| ((xi + gi).clamp(l, h) - xi).abs())
        .fold(0.0, f64::max)
}

/// Maximizes `f` over the box [lo, hi] by projected BFGS with Armijo
/// backtracking. `f` returns value and gradient; evaluation errors at trial
/// points count as failed line-search steps.
pub fn maximize<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &AscentOptions) -> Result<AscentResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::TrainingDiverged(format!("non-finite objective {fx} at start")));
    }
    let initial_value = fx;
    // Inverse Hessian of −f; starts as a scaled identity.
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    let mut iters = 0;
    let mut converged = false;
    let mut small_gain = 0;
    while iters < opts.max_iters {
        if projected_grad_norm(&x, &g, lo, hi) <= opts.tol {
            converged = true;
            break;
        }
        iters += 1;
        // Coordinates pinned at a bound with the gradient pushing outward stay put.
        let free: Vec<bool> = (0..n).map(|i| !((x[i] <= lo[i] && g[i] < 0.0) || (x[i] >= hi[i] && g[i] > 0.0))).collect();
        let gm = DVector::from_fn(n, |i, _| if free[i] { g[i] } else { 0.0 });
        let mut dir = &hinv * &gm;
        for i in 0..n {
            if !free[i] {
                dir[i] = 0.0;
            }
        }
        if dir.dot(&gm) <= 0.0 {
            hinv = DMatrix::identity(n, n);
            scaled = false;
            dir = gm.clone();
        }
        let dmax = dir.amax();
        if dmax > opts.max_step {
            dir *= opts.max_step / dmax;
        }
        let mut accepted = None;
        let mut a = 1.0;
        for _ in 0..40 {
            let mut xn: Vec<f64> = (0..n).map(|i| x[i] + a * dir[i]).collect();
            project(&mut xn, lo, hi);
            let dec: f64 = (0..n).map(|i| (xn[i] - x[i]) * g[i]).sum();
            if dec <= 0.0 {
                break;
            }
            if let Ok((fn_, gn)) = f(&xn) {
                if fn_.is_finite() && gn.iter().all(|v| v.is_finite()) && fn_ >= fx + 1e-4 * dec {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            a *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            // Retry along the plain gradient before giving up.
            if hinv != DMatrix::identity(n, n) {
                hinv = DMatrix::identity(n, n);
                scaled = false;
                continue;
            }
            converged = true;
            break;
        };
        let sv = DVector::from_fn(n, |i, _| xn[i] - x[i]);
        let yv = DVector::from_fn(n, |i, _| -(gn[i] - g[i]));
        let sy = sv.dot(&yv);
        if sy > 1e-12 * sv.norm() * yv.norm() {
            if !scaled {
                hinv = DMatrix::identity(n, n) * (sy / yv.dot(&yv));
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &yv;
            let yhy = yv.dot(&hy);
            // BFGS inverse update, expanded form.
            hinv += (&sv * sv.transpose()) * (rho * (1.0 + rho * yhy)) - (&hy * sv.transpose() + &sv * hy.transpose()) * rho;
        }
        let gain = fn_ - fx;
        x = xn;
        fx = fn_;
        g = gn;
        if gain <= opts.ftol * (1.0 + fx.abs()) {
            small_gain += 1;
            if small_gain >= 3 {
                converged = true;
                break;
            }
        } else {
            small_gain = 0;
        }
    }
    let grad_norm = projected_grad_norm(&x, &g, lo, hi);
    Ok(AscentResult { x, value: fx, initial_value, iters, converged, grad_norm })
}
