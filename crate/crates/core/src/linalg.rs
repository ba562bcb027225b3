//! Dense SPD factorization and Gaussian quantile helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_JITTER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Dense symmetric matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds from row-major entries, checking shape, finiteness and symmetry.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, found: data.len() });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("matrix has non-finite entries".into()));
        }
        let scale = data.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..i {
                if (data[i * n + j] - data[j * n + i]).abs() > 1e-12 * scale {
                    return Err(Error::Domain(format!("matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Self { n, data }
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: m.ncols() });
        }
        Self::from_row_major(n, m.transpose().as_slice().to_vec())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn add_diag(&mut self, v: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += v;
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }
}

/// Lower Cholesky factor, row-major, with the diagonal jitter that was needed.
#[derive(Debug, Clone, PartialEq)]
pub struct CholFactor {
    n: usize,
    l: Vec<f64>,
    jitter: f64,
}

/// Four-lane dot product; the compiler vectorizes this reliably.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

fn try_factor(m: &SymMatrix, jitter: f64) -> Option<Vec<f64>> {
    let n = m.n;
    let max_diag = (0..n).map(|i| m.get(i, i).abs()).fold(0.0f64, f64::max);
    let floor = f64::EPSILON * max_diag * n as f64;
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = m.data[i * n + j] - dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            if i == j {
                let piv = s + jitter;
                if !piv.is_finite() || piv <= floor {
                    return None;
                }
                l[i * n + i] = piv.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Factors `m` with the first jitter from `schedule` that yields a positive
/// definite result. The jitter is added to the diagonal as an absolute value.
pub fn cholesky(m: &SymMatrix, jitter_schedule: &[f64]) -> Result<CholFactor> {
    if m.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::NotPositiveDefinite { dim: m.n, max_jitter: 0.0 });
    }
    for &jit in jitter_schedule {
        if let Some(l) = try_factor(m, jit) {
            return Ok(CholFactor { n: m.n, l, jitter: jit });
        }
    }
    Err(Error::NotPositiveDefinite {
        dim: m.n,
        max_jitter: jitter_schedule.iter().cloned().fold(0.0, f64::max),
    })
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn l(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    pub fn l_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.l)
    }

    /// Rebuilds a factor from a stored lower triangle (row-major).
    pub fn from_lower(n: usize, l: Vec<f64>, jitter: f64) -> Result<Self> {
        if l.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, found: l.len() });
        }
        if (0..n).any(|i| !(l[i * n + i] > 0.0)) {
            return Err(Error::NotPositiveDefinite { dim: n, max_jitter: jitter });
        }
        Ok(Self { n, l, jitter })
    }

    pub fn lower_row_major(&self) -> &[f64] {
        &self.l
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.l(i, i).ln()).sum::<f64>()
    }

    /// Solves L x = b in place.
    pub fn forward_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            x[i] = (x[i] - dot(row, &x[..i])) / self.l[i * n + i];
        }
    }

    /// Solves Lᵀ x = b in place.
    pub fn backward_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            x[i] /= self.l[i * n + i];
            let xi = x[i];
            let row = &self.l[i * n..i * n + i];
            for (xj, lij) in x[..i].iter_mut().zip(row) {
                *xj -= lij * xi;
            }
        }
    }

    pub fn forward(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check(b.len())?;
        let mut x = b.to_vec();
        self.forward_in_place(&mut x);
        Ok(x)
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check(b.len())?;
        let mut x = b.to_vec();
        self.forward_in_place(&mut x);
        self.backward_in_place(&mut x);
        Ok(x)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, found: len });
        }
        Ok(())
    }

    /// Row-major L⁻¹ (lower triangular).
    pub fn inverse_lower(&self) -> Vec<f64> {
        let n = self.n;
        // Column j of L⁻¹ is forward substitution on e_j; storing it transposed
        // (as row j of L⁻ᵀ) keeps every inner product contiguous.
        let mut ut = vec![0.0; n * n];
        for j in 0..n {
            let col = &mut ut[j * n..(j + 1) * n];
            col[j] = 1.0 / self.l[j * n + j];
            for i in j + 1..n {
                let row = &self.l[i * n + j..i * n + i];
                col[i] = -dot(row, &col[j..i]) / self.l[i * n + i];
            }
        }
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for i in j..n {
                out[i * n + j] = ut[j * n + i];
            }
        }
        out
    }

    /// Full inverse (L Lᵀ)⁻¹.
    pub fn inverse(&self) -> SymMatrix {
        let n = self.n;
        // linv is lower: (LLᵀ)⁻¹_ij = Σ_k linv[k][i] linv[k][j] for k ≥ max(i,j).
        // Working with its transpose keeps the sums contiguous.
        let linv = self.inverse_lower();
        let mut u = vec![0.0; n * n];
        for i in 0..n {
            for k in i..n {
                u[i * n + k] = linv[k * n + i];
            }
        }
        let mut out = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v = dot(&u[i * n + j..(i + 1) * n], &u[j * n + j..(j + 1) * n]);
                out.data[i * n + j] = v;
                out.data[j * n + i] = v;
            }
        }
        out
    }
}

/// Solves (L Lᵀ) x = b.
pub fn chol_solve(f: &CholFactor, b: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(f.solve(b.as_slice())?))
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

const A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.38357751867269e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];

// Lower half only; the upper half is obtained by reflection so that
// antisymmetry holds bit-for-bit.
fn inv_cdf_lower(p: f64) -> f64 {
    let z = if p < 0.02425 {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    // One Newton step against the libm-backed CDF.
    let pdf = normal_pdf(z);
    if pdf > 0.0 {
        z - (normal_cdf(z) - p) / pdf
    } else {
        z
    }
}

/// Inverse of the standard normal CDF.
pub fn normal_inv_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability {p} outside (0,1)")));
    }
    if p == 0.5 {
        Ok(0.0)
    } else if p < 0.5 {
        Ok(inv_cdf_lower(p))
    } else {
        Ok(-inv_cdf_lower(1.0 - p))
    }
}
