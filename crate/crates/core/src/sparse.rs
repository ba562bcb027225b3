//! FIC sparse approximation through a small set of inducing inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpDataset, GpHyperparams, GpModel, GpPrediction, Input, Kernel};
use crate::linalg::{cholesky, dot, CholFactor, SymMatrix, DEFAULT_JITTER};
use crate::opt::{maximize, AscentOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducingSet {
    points: Vec<Input>,
}

impl InducingSet {
    pub fn new(points: Vec<Input>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain("inducing set must be nonempty".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("inducing inputs must be finite".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Input] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    fn from_flat(v: &[f64]) -> Self {
        Self { points: v.chunks(2).map(|c| [c[0], c[1]]).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub ftol: f64,
}

impl Default for SparseOptions {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-4, ftol: 1e-9 }
    }
}

/// Prediction-ready FIC posterior. Everything stored is sized by the
/// inducing count only.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGpModel {
    hyper: GpHyperparams,
    kernel: Kernel,
    inducing: InducingSet,
    lu: CholFactor,
    la: CholFactor,
    w: Vec<f64>,
}

fn to_dmatrix_lower(f: &CholFactor) -> DMatrix<f64> {
    f.l_matrix()
}

/// Factors shared by precompute, likelihood and gradient.
struct FicFactors {
    lu: CholFactor,
    lu_m: DMatrix<f64>,
    /// L_u⁻¹ K_uf
    v: DMatrix<f64>,
    lambda: DVector<f64>,
    la: CholFactor,
    la_m: DMatrix<f64>,
}

fn fic_factors(kern: &Kernel, sn2: f64, z: &[Input], x: &[Input]) -> Result<FicFactors> {
    let m = z.len();
    let n = x.len();
    let lu = cholesky(&kern.gram(z, 0.0), &DEFAULT_JITTER)?;
    let lu_m = to_dmatrix_lower(&lu);
    let mut v = DMatrix::from_fn(m, n, |j, i| kern.eval(&z[j], &x[i]));
    if !lu_m.solve_lower_triangular_mut(&mut v) {
        return Err(Error::NotPositiveDefinite { dim: m, max_jitter: lu.jitter() });
    }
    let lambda = DVector::from_fn(n, |i, _| {
        let q = v.column(i).norm_squared();
        (kern.sf2 - q).max(0.0) + sn2
    });
    let mut vs = v.clone();
    for i in 0..n {
        let s = 1.0 / lambda[i].sqrt();
        vs.column_mut(i).scale_mut(s);
    }
    let mut a = &vs * vs.transpose();
    for j in 0..m {
        a[(j, j)] += 1.0;
    }
    let la = cholesky(&SymMatrix::from_fn(m, |i, j| 0.5 * (a[(i, j)] + a[(j, i)])), &DEFAULT_JITTER)?;
    let la_m = to_dmatrix_lower(&la);
    Ok(FicFactors { lu, lu_m, v, lambda, la, la_m })
}

/// Builds the FIC posterior for fixed hyperparameters and inducing inputs.
pub fn fic_precompute(h: &GpHyperparams, z: &InducingSet, data: &GpDataset) -> Result<SparseGpModel> {
    let kern = Kernel::new(h);
    let f = fic_factors(&kern, h.noise_var(), z.points(), data.inputs())?;
    let y = DVector::from_column_slice(data.targets());
    // w = L_u⁻ᵀ A⁻¹ V Λ⁻¹ y
    let ly = y.component_div(&f.lambda);
    let mut w = &f.v * ly;
    if !(f.la_m.solve_lower_triangular_mut(&mut w)
        && f.la_m.tr_solve_lower_triangular_mut(&mut w)
        && f.lu_m.tr_solve_lower_triangular_mut(&mut w))
    {
        return Err(Error::NotPositiveDefinite { dim: z.len(), max_jitter: f.lu.jitter() });
    }
    Ok(SparseGpModel { hyper: *h, kernel: kern, inducing: z.clone(), lu: f.lu, la: f.la, w: w.as_slice().to_vec() })
}

/// FIC log marginal likelihood and its gradient with respect to the
/// inducing inputs, flattened as [z₀₀, z₀₁, z₁₀, …].
pub fn fic_log_marginal_likelihood(h: &GpHyperparams, z: &InducingSet, data: &GpDataset) -> Result<(f64, Vec<f64>)> {
    let kern = Kernel::new(h);
    let zs = z.points();
    let xs = data.inputs();
    let (m, n) = (zs.len(), xs.len());
    let f = fic_factors(&kern, h.noise_var(), zs, xs)?;
    let y = DVector::from_column_slice(data.targets());
    let lam_inv = f.lambda.map(|l| 1.0 / l);

    // V Λ⁻¹ and A⁻¹ V Λ⁻¹ (via L_A).
    let mut vl = f.v.clone();
    for i in 0..n {
        vl.column_mut(i).scale_mut(lam_inv[i]);
    }
    let mut la_inv_vl = vl.clone();
    f.la_m.solve_lower_triangular_mut(&mut la_inv_vl);
    let mut ainv_vl = la_inv_vl.clone();
    f.la_m.tr_solve_lower_triangular_mut(&mut ainv_vl);

    // β = C⁻¹ y = Λ⁻¹y − Λ⁻¹ Vᵀ A⁻¹ V Λ⁻¹ y
    let ly = y.component_mul(&lam_inv);
    let t = &ainv_vl * &y;
    let beta = &ly - (f.v.transpose() * t).component_mul(&lam_inv);
    let log_det = f.lambda.iter().map(|l| l.ln()).sum::<f64>() + f.la.log_det();
    let value = -0.5 * y.dot(&beta) - 0.5 * log_det - 0.5 * n as f64 * LN_2PI;

    // diag(C⁻¹)_i = 1/Λ_i − |L_A⁻¹ v_i|² / Λ_i²; la_inv_vl already carries one Λ⁻¹.
    let dw = DVector::from_fn(n, |i, _| beta[i] * beta[i] - (lam_inv[i] - la_inv_vl.column(i).norm_squared()));

    // G_F = L_u⁻ᵀ [ (Vβ)βᵀ − A⁻¹VΛ⁻¹ − V diag(dW) ]
    let vb = &f.v * &beta;
    let mut gf = &vb * beta.transpose() - &ainv_vl;
    for i in 0..n {
        let s = dw[i];
        gf.column_mut(i).axpy(-s, &f.v.column(i), 1.0);
    }
    f.lu_m.tr_solve_lower_triangular_mut(&mut gf);
    // G_U = G_F Vᵀ L_u⁻¹, i.e. (L_u⁻ᵀ (V G_Fᵀ))ᵀ
    let mut gu_t = &f.v * gf.transpose();
    f.lu_m.tr_solve_lower_triangular_mut(&mut gu_t);
    let gu = gu_t.transpose();

    let mut grad = vec![0.0; 2 * m];
    for j in 0..m {
        for i in 0..n {
            let k = kern.eval(&zs[j], &xs[i]);
            let g = gf[(j, i)] * k;
            for d in 0..2 {
                grad[2 * j + d] -= g * (zs[j][d] - xs[i][d]) / kern.ell2[d];
            }
        }
        for l in 0..m {
            if l == j {
                continue;
            }
            let k = kern.eval(&zs[j], &zs[l]);
            let g = gu[(j, l)] * k;
            for d in 0..2 {
                grad[2 * j + d] += g * (zs[j][d] - zs[l][d]) / kern.ell2[d];
            }
        }
    }
    Ok((value, grad))
}

/// Evenly strided subset of the training inputs.
pub fn stride_init(data: &GpDataset, m_tilde: usize) -> Result<InducingSet> {
    let m = data.len();
    if m_tilde == 0 || m_tilde > m {
        return Err(Error::Domain(format!("inducing count {m_tilde} must be in 1..={m}")));
    }
    InducingSet::new((0..m_tilde).map(|i| data.inputs()[i * m / m_tilde]).collect())
}

/// Places `m_tilde` inducing inputs by FIC likelihood ascent, starting from an
/// even stride over the training inputs. Hyperparameters stay at the full
/// model's values.
pub fn select_inducing(full: &GpModel, m_tilde: usize, opts: &SparseOptions) -> Result<InducingSet> {
    let init = stride_init(full.data(), m_tilde)?;
    optimize_inducing(full.hyper(), full.data(), init, opts)
}

pub fn optimize_inducing(h: &GpHyperparams, data: &GpDataset, init: InducingSet, opts: &SparseOptions) -> Result<InducingSet> {
    let ell = h.lengthscale_sq().map(f64::sqrt);
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for x in data.inputs() {
        for d in 0..2 {
            lo[d] = lo[d].min(x[d] - ell[d]);
            hi[d] = hi[d].max(x[d] + ell[d]);
        }
    }
    let m = init.len();
    let lo: Vec<f64> = (0..2 * m).map(|k| lo[k % 2]).collect();
    let hi: Vec<f64> = (0..2 * m).map(|k| hi[k % 2]).collect();
    let step = ell[0].min(ell[1]);
    let ascent = AscentOptions { max_iters: opts.max_iters, tol: opts.tol, max_step: step, ftol: opts.ftol };
    let obj = |v: &[f64]| fic_log_marginal_likelihood(h, &InducingSet::from_flat(v), data);
    let res = maximize(obj, &init.flat(), &lo, &hi, &ascent).map_err(|e| match e {
        Error::TrainingDiverged(s) => Error::TrainingDiverged(format!("inducing selection: {s}")),
        other => other,
    })?;
    Ok(InducingSet::from_flat(&res.x))
}

impl SparseGpModel {
    pub fn hyper(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn inducing(&self) -> &InducingSet {
        &self.inducing
    }

    pub fn predict(&self, x: &Input) -> GpPrediction {
        let mut k: Vec<f64> = self.inducing.points.iter().map(|z| self.kernel.eval(x, z)).collect();
        let mean = dot(&k, &self.w);
        self.lu.forward_in_place(&mut k);
        let q = dot(&k, &k);
        self.la.forward_in_place(&mut k);
        let s = dot(&k, &k);
        let var = (self.kernel.sf2 - q + s).clamp(0.0, self.kernel.sf2);
        GpPrediction { mean, var }
    }

    pub fn predict_batch(&self, xs: &[Input]) -> Vec<GpPrediction> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    /// Parts needed to serialize the model: inducing-space factors and weights.
    pub fn parts(&self) -> (&CholFactor, &CholFactor, &[f64]) {
        (&self.lu, &self.la, &self.w)
    }

    pub fn from_parts(hyper: GpHyperparams, inducing: InducingSet, lu: CholFactor, la: CholFactor, w: Vec<f64>) -> Result<Self> {
        let m = inducing.len();
        if lu.dim() != m || la.dim() != m || w.len() != m {
            return Err(Error::DimensionMismatch { expected: m, found: lu.dim().max(la.dim()).max(w.len()) });
        }
        Ok(Self { kernel: Kernel::new(&hyper), hyper, inducing, lu, la, w })
    }
}

/// Full-then-sparse convenience: inducing selection followed by precompute.
pub fn sparsify(full: &GpModel, m_tilde: usize, opts: &SparseOptions) -> Result<SparseGpModel> {
    let z = select_inducing(full, m_tilde, opts)?;
    fic_precompute(full.hyper(), &z, full.data())
}
