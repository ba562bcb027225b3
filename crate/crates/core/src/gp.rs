//! Exact Gaussian-process regression with a squared-exponential kernel over
//! two-dimensional inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, dot, CholFactor, SymMatrix, DEFAULT_JITTER};
use crate::opt::{maximize, AscentOptions};

pub const INPUT_DIM: usize = 2;
pub type Input = [f64; INPUT_DIM];

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Training inputs (HV velocity, lead-AV velocity) and scalar targets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GpDataset {
    inputs: Vec<Input>,
    targets: Vec<f64>,
}

impl GpDataset {
    pub fn new(inputs: Vec<Input>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch { expected: inputs.len(), found: targets.len() });
        }
        if inputs.is_empty() {
            return Err(Error::Domain("dataset must contain at least one sample".into()));
        }
        if inputs.iter().flatten().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::Domain("dataset contains non-finite values".into()));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn inputs(&self) -> &[Input] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Subset by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Domain(format!("index {bad} out of range for {} samples", self.len())));
        }
        Self::new(idx.iter().map(|&i| self.inputs[i]).collect(), idx.iter().map(|&i| self.targets[i]).collect())
    }

    /// Concatenates datasets.
    pub fn concat(parts: &[GpDataset]) -> Result<Self> {
        let inputs = parts.iter().flat_map(|p| p.inputs.iter().copied()).collect();
        let targets = parts.iter().flat_map(|p| p.targets.iter().copied()).collect();
        Self::new(inputs, targets)
    }
}

/// SE-kernel hyperparameters, held in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub log_signal_var: f64,
    /// Logs of the squared lengthscales ℓ_d².
    pub log_lengthscale_sq: [f64; INPUT_DIM],
    pub log_noise_var: f64,
}

impl GpHyperparams {
    pub fn new(signal_var: f64, lengthscale_sq: [f64; INPUT_DIM], noise_var: f64) -> Result<Self> {
        let all = [signal_var, lengthscale_sq[0], lengthscale_sq[1], noise_var];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Domain(format!("hyperparameters must be positive and finite: {all:?}")));
        }
        Ok(Self {
            log_signal_var: signal_var.ln(),
            log_lengthscale_sq: [lengthscale_sq[0].ln(), lengthscale_sq[1].ln()],
            log_noise_var: noise_var.ln(),
        })
    }

    pub fn signal_var(&self) -> f64 {
        self.log_signal_var.exp()
    }

    pub fn lengthscale_sq(&self) -> [f64; INPUT_DIM] {
        [self.log_lengthscale_sq[0].exp(), self.log_lengthscale_sq[1].exp()]
    }

    pub fn noise_var(&self) -> f64 {
        self.log_noise_var.exp()
    }

    /// Order: log σ_f², log ℓ₁², log ℓ₂², log σ².
    pub fn to_log_vec(&self) -> [f64; 4] {
        [self.log_signal_var, self.log_lengthscale_sq[0], self.log_lengthscale_sq[1], self.log_noise_var]
    }

    pub fn from_log(v: &[f64]) -> Self {
        Self { log_signal_var: v[0], log_lengthscale_sq: [v[1], v[2]], log_noise_var: v[3] }
    }

    /// σ_f² = var(d), σ² = 0.1·var(d), ℓ_d² = var of input dimension d.
    pub fn heuristic(data: &GpDataset, bounds: &HyperBounds) -> Self {
        let var = |xs: &mut dyn Iterator<Item = f64>| {
            let v: Vec<f64> = xs.collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
        };
        let vd = var(&mut data.targets.iter().copied());
        let v0 = var(&mut data.inputs.iter().map(|a| a[0]));
        let v1 = var(&mut data.inputs.iter().map(|a| a[1]));
        let (sl, sh) = bounds.variance;
        let (ll, lh) = bounds.lengthscale_sq;
        Self {
            log_signal_var: vd.clamp(sl, sh).ln(),
            log_lengthscale_sq: [v0.clamp(ll, lh).ln(), v1.clamp(ll, lh).ln()],
            log_noise_var: (0.1 * vd).clamp(sl, sh).ln(),
        }
    }
}

/// Box bounds in natural (not log) units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    /// Applies to both σ_f² and σ².
    pub variance: (f64, f64),
    pub lengthscale_sq: (f64, f64),
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self { variance: (1e-6, 1e3), lengthscale_sq: (1e-4, 1e6) }
    }
}

impl HyperBounds {
    fn log_box(&self) -> ([f64; 4], [f64; 4]) {
        let (a, b) = (self.variance.0.ln(), self.variance.1.ln());
        let (c, d) = (self.lengthscale_sq.0.ln(), self.lengthscale_sq.1.ln());
        ([a, c, c, a], [b, d, d, b])
    }
}

/// Predictive mean and variance of the latent discrepancy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpPrediction {
    pub mean: f64,
    pub var: f64,
}

#[inline]
fn sq_dist_scaled(x: &Input, y: &Input, ell2: &[f64; INPUT_DIM]) -> f64 {
    let d0 = x[0] - y[0];
    let d1 = x[1] - y[1];
    d0 * d0 / ell2[0] + d1 * d1 / ell2[1]
}

/// σ_f² exp(−½ Σ_d (x_d − y_d)² / ℓ_d²).
pub fn se_kernel(x: &Input, y: &Input, h: &GpHyperparams) -> f64 {
    h.signal_var() * (-0.5 * sq_dist_scaled(x, y, &h.lengthscale_sq())).exp()
}

/// Kernel evaluator with the exponentials of the hyperparameters cached.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Kernel {
    pub sf2: f64,
    pub ell2: [f64; INPUT_DIM],
}

impl Kernel {
    pub fn new(h: &GpHyperparams) -> Self {
        Self { sf2: h.signal_var(), ell2: h.lengthscale_sq() }
    }

    #[inline]
    pub fn eval(&self, x: &Input, y: &Input) -> f64 {
        self.sf2 * (-0.5 * sq_dist_scaled(x, y, &self.ell2)).exp()
    }

    pub fn gram(&self, xs: &[Input], noise: f64) -> SymMatrix {
        SymMatrix::from_fn(xs.len(), |i, j| self.eval(&xs[i], &xs[j]) + if i == j { noise } else { 0.0 })
    }

    pub fn cross(&self, x: &Input, ys: &[Input]) -> Vec<f64> {
        ys.iter().map(|y| self.eval(x, y)).collect()
    }
}

/// Value and log-space gradient of the log marginal likelihood.
pub fn log_marginal_likelihood(h: &GpHyperparams, data: &GpDataset) -> Result<(f64, [f64; 4])> {
    log_marginal_likelihood_with(h, data, &DEFAULT_JITTER)
}

pub fn log_marginal_likelihood_with(h: &GpHyperparams, data: &GpDataset, jitter: &[f64]) -> Result<(f64, [f64; 4])> {
    if data.is_empty() {
        return Err(Error::Domain("log marginal likelihood needs data".into()));
    }
    LmlWorkspace::new(data).eval(h, jitter)
}

/// Pairwise squared differences, reused across optimizer iterations.
struct LmlWorkspace<'a> {
    data: &'a GpDataset,
    d0: Vec<f64>,
    d1: Vec<f64>,
}

impl<'a> LmlWorkspace<'a> {
    fn new(data: &'a GpDataset) -> Self {
        let n = data.len();
        let mut d0 = vec![0.0; n * n];
        let mut d1 = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d0[i * n + j] = (data.inputs[i][0] - data.inputs[j][0]).powi(2);
                d1[i * n + j] = (data.inputs[i][1] - data.inputs[j][1]).powi(2);
            }
        }
        Self { data, d0, d1 }
    }

    fn eval(&self, h: &GpHyperparams, jitter: &[f64]) -> Result<(f64, [f64; 4])> {
        let n = self.data.len();
        let sf2 = h.signal_var();
        let [l0, l1] = h.lengthscale_sq();
        let sn2 = h.noise_var();
        let (i0, i1) = (0.5 / l0, 0.5 / l1);
        let mut kf = vec![0.0; n * n];
        for (k, out) in kf.iter_mut().enumerate() {
            *out = sf2 * (-(self.d0[k] * i0 + self.d1[k] * i1)).exp();
        }
        let mut kmat = SymMatrix::from_row_major(n, kf.clone())?;
        kmat.add_diag(sn2);
        let chol = cholesky(&kmat, jitter)?;
        let alpha = chol.solve(self.data.targets())?;
        let value = -0.5 * dot(self.data.targets(), &alpha) - 0.5 * chol.log_det() - 0.5 * n as f64 * LN_2PI;

        // ∂L/∂θ = ½ Σ_ij (α_i α_j − K⁻¹_ij) ∂K_ij/∂θ
        let kinv = chol.inverse();
        let kinv = kinv.as_slice();
        let (mut g_sf, mut g_l0, mut g_l1, mut tr_w) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let row = i * n;
            let ai = alpha[i];
            for j in 0..n {
                let w = ai * alpha[j] - kinv[row + j];
                let wk = w * kf[row + j];
                g_sf += wk;
                g_l0 += wk * self.d0[row + j];
                g_l1 += wk * self.d1[row + j];
            }
            tr_w += ai * ai - kinv[row + i];
        }
        let grad = [0.5 * g_sf, 0.5 * g_l0 * i0, 0.5 * g_l1 * i1, 0.5 * sn2 * tr_w];
        Ok((value, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
    /// Relative LML gain below which an iteration counts as stalled.
    pub ftol: f64,
    pub seed: u64,
    pub bounds: HyperBounds,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { restarts: 5, max_iters: 60, tol: 1e-3, ftol: 1e-7, seed: 0, bounds: HyperBounds::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub start: [f64; 4],
    pub end: Option<[f64; 4]>,
    pub lml: Option<f64>,
    pub iters: usize,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub restarts: Vec<RestartOutcome>,
    pub best: usize,
    pub lml: f64,
}

/// Trained exact GP posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    data: GpDataset,
    hyper: GpHyperparams,
    kernel: Kernel,
    chol: CholFactor,
    alpha: Vec<f64>,
}

impl PartialEq for Kernel {
    fn eq(&self, o: &Self) -> bool {
        self.sf2 == o.sf2 && self.ell2 == o.ell2
    }
}

impl GpModel {
    /// Conditions the GP on `data` with fixed hyperparameters.
    pub fn new(data: GpDataset, hyper: GpHyperparams) -> Result<Self> {
        let kernel = Kernel::new(&hyper);
        let chol = cholesky(&kernel.gram(data.inputs(), hyper.noise_var()), &DEFAULT_JITTER)?;
        let alpha = chol.solve(data.targets())?;
        Ok(Self { data, hyper, kernel, chol, alpha })
    }

    /// Zero-data model: predictions are the prior (0, σ_f²).
    pub fn prior(hyper: GpHyperparams) -> Self {
        Self {
            data: GpDataset::default(),
            hyper,
            kernel: Kernel::new(&hyper),
            chol: CholFactor::from_lower(0, vec![], 0.0).expect("empty factor"),
            alpha: vec![],
        }
    }

    /// Reassembles a stored model, checking consistency of every part.
    pub fn from_parts(data: GpDataset, hyper: GpHyperparams, chol: CholFactor, alpha: Vec<f64>) -> Result<Self> {
        let n = data.len();
        if chol.dim() != n || alpha.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: chol.dim().max(alpha.len()) });
        }
        Ok(Self { kernel: Kernel::new(&hyper), data, hyper, chol, alpha })
    }

    pub fn data(&self) -> &GpDataset {
        &self.data
    }

    pub fn hyper(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn chol(&self) -> &CholFactor {
        &self.chol
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.data.len();
        -0.5 * dot(self.data.targets(), &self.alpha) - 0.5 * self.chol.log_det() - 0.5 * n as f64 * LN_2PI
    }

    /// Posterior mean and latent variance; tiny negative variances from
    /// rounding are clamped to zero.
    pub fn predict(&self, x: &Input) -> GpPrediction {
        let (mean, var) = self.raw_predict(x);
        GpPrediction { mean, var: var.clamp(0.0, self.kernel.sf2) }
    }

    /// As [`GpModel::predict`] but rejects variances below −1e-9.
    pub fn predict_checked(&self, x: &Input) -> Result<GpPrediction> {
        let (mean, var) = self.raw_predict(x);
        if var < -1e-9 || !var.is_finite() || !mean.is_finite() {
            return Err(Error::Domain(format!("posterior variance {var} at {x:?}")));
        }
        Ok(GpPrediction { mean, var: var.clamp(0.0, self.kernel.sf2) })
    }

    fn raw_predict(&self, x: &Input) -> (f64, f64) {
        if self.data.is_empty() {
            return (0.0, self.kernel.sf2);
        }
        let mut k = self.kernel.cross(x, self.data.inputs());
        let mean = dot(&k, &self.alpha);
        self.chol.forward_in_place(&mut k);
        (mean, self.kernel.sf2 - dot(&k, &k))
    }

    pub fn predict_batch(&self, xs: &[Input]) -> Vec<GpPrediction> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

/// Maximizes the log marginal likelihood from `init` and random restarts.
pub fn fit(data: &GpDataset, init: &GpHyperparams, opts: &TrainOptions) -> Result<GpModel> {
    fit_with_report(data, init, opts).map(|(m, _)| m)
}

pub fn fit_with_report(data: &GpDataset, init: &GpHyperparams, opts: &TrainOptions) -> Result<(GpModel, FitReport)> {
    if data.len() < 2 {
        return Err(Error::Domain(format!("fit needs at least 2 samples, got {}", data.len())));
    }
    let ws = LmlWorkspace::new(data);
    let (lo, hi) = opts.bounds.log_box();
    let ascent = AscentOptions { max_iters: opts.max_iters, tol: opts.tol, max_step: 2.0, ftol: opts.ftol };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut outcomes = Vec::new();
    let mut best: Option<(usize, f64, [f64; 4])> = None;
    for r in 0..opts.restarts.max(1) {
        let mut start = init.to_log_vec();
        if r > 0 {
            for s in start.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *s += z;
            }
        }
        for i in 0..4 {
            start[i] = start[i].clamp(lo[i], hi[i]);
        }
        let obj = |x: &[f64]| ws.eval(&GpHyperparams::from_log(x), &DEFAULT_JITTER).map(|(v, g)| (v, g.to_vec()));
        match maximize(obj, &start, &lo, &hi, &ascent) {
            Ok(res) => {
                let end = [res.x[0], res.x[1], res.x[2], res.x[3]];
                if best.is_none_or(|(_, v, _)| res.value > v) {
                    best = Some((r, res.value, end));
                }
                outcomes.push(RestartOutcome {
                    start,
                    end: Some(end),
                    lml: Some(res.value),
                    iters: res.iters,
                    converged: res.converged,
                    error: None,
                });
            }
            Err(e) => outcomes.push(RestartOutcome {
                start,
                end: None,
                lml: None,
                iters: 0,
                converged: false,
                error: Some(e.to_string()),
            }),
        }
    }
    let Some((best_idx, lml, x)) = best else {
        let msgs: Vec<String> = outcomes.iter().filter_map(|o| o.error.clone()).collect();
        return Err(Error::TrainingDiverged(format!("all {} restarts failed: {}", outcomes.len(), msgs.join("; "))));
    };
    let model = GpModel::new(data.clone(), GpHyperparams::from_log(&x))?;
    Ok((model, FitReport { restarts: outcomes, best: best_idx, lml }))
}
