//! Human-driven vehicle model: ARX nominal dynamics plus a GP discrepancy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{GpDataset, GpModel, GpPrediction, Input};
use crate::sparse::SparseGpModel;

pub const ARX_ORDER: usize = 4;

/// Coefficients of v^H_k = −Σ c_i v^H_{k−i} + Σ b_i v^N_{k−i}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArxCoefficients {
    pub c: [f64; ARX_ORDER],
    pub b: [f64; ARX_ORDER],
}

impl ArxCoefficients {
    pub fn published() -> Self {
        Self { c: [-3.0227, 3.3543, -1.6329, 0.3014], b: [0.0063, -0.0303, 0.0495, -0.0254] }
    }

    pub fn new(c: [f64; ARX_ORDER], b: [f64; ARX_ORDER]) -> Result<Self> {
        let s = Self { c, b };
        if c.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::Domain("ARX coefficients must be finite".into()));
        }
        let g = s.dc_gain();
        if !(0.9..=1.1).contains(&g) {
            return Err(Error::Domain(format!("ARX DC gain {g} outside [0.9, 1.1]")));
        }
        Ok(s)
    }

    /// Σb / (1 + Σc): steady-state ratio of HV to lead velocity.
    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.c.iter().sum::<f64>())
    }
}

impl Default for ArxCoefficients {
    fn default() -> Self {
        Self::published()
    }
}

/// Most recent first: `hv[0]` is v^H_{k−1}, `lead[3]` is v^N_{k−4}.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityHistory {
    pub hv: [f64; ARX_ORDER],
    pub lead: [f64; ARX_ORDER],
}

impl VelocityHistory {
    pub fn new(hv: [f64; ARX_ORDER], lead: [f64; ARX_ORDER]) -> Result<Self> {
        if hv.iter().chain(&lead).any(|v| !v.is_finite()) {
            return Err(Error::Domain("velocity history must be finite".into()));
        }
        Ok(Self { hv, lead })
    }

    pub fn constant(hv: f64, lead: f64) -> Self {
        Self { hv: [hv; ARX_ORDER], lead: [lead; ARX_ORDER] }
    }

    /// Shifts in the newest pair (v^H_k, v^N_k).
    pub fn push(&mut self, hv: f64, lead: f64) {
        self.hv.rotate_right(1);
        self.lead.rotate_right(1);
        self.hv[0] = hv;
        self.lead[0] = lead;
    }

    /// GP input (v^H_{k−1}, v^N_{k−1}).
    pub fn gp_input(&self) -> Input {
        [self.hv[0], self.lead[0]]
    }
}

pub fn arx_step(c: &ArxCoefficients, h: &VelocityHistory) -> f64 {
    let mut v = 0.0;
    for i in 0..ARX_ORDER {
        v += -c.c[i] * h.hv[i] + c.b[i] * h.lead[i];
    }
    v
}

/// Free ARX simulation driven by `lead`, starting from `init`. Entry k of
/// the result is the HV velocity produced after seeing `lead[..k]`.
pub fn arx_rollout(c: &ArxCoefficients, init: VelocityHistory, lead: &[f64]) -> Vec<f64> {
    let mut h = init;
    let mut out = Vec::with_capacity(lead.len());
    for &u in lead {
        let v = arx_step(c, &h);
        out.push(v);
        h.push(v, u);
    }
    out
}

/// Smallest series that yields one discrepancy sample.
pub const MIN_SERIES_LEN: usize = ARX_ORDER + 1;

fn check_series(v_hv: &[f64], v_lead: &[f64]) -> Result<()> {
    if v_hv.len() != v_lead.len() {
        return Err(Error::DimensionMismatch { expected: v_hv.len(), found: v_lead.len() });
    }
    if v_hv.len() < MIN_SERIES_LEN {
        return Err(Error::SeriesTooShort { len: v_hv.len(), min: MIN_SERIES_LEN });
    }
    Ok(())
}

fn history_at(v_hv: &[f64], v_lead: &[f64], j: usize) -> VelocityHistory {
    let mut h = VelocityHistory::default();
    for i in 0..ARX_ORDER {
        h.hv[i] = v_hv[j - 1 - i];
        h.lead[i] = v_lead[j - 1 - i];
    }
    h
}

/// One-step ARX residuals of a measured series. Sample j−1 (for j ≥ 4) has
/// input (v^H_{j−1}, v^N_{j−1}) and target v^H_j − arx_step(measured lags).
pub fn build_discrepancy_dataset(v_hv: &[f64], v_lead: &[f64], c: &ArxCoefficients) -> Result<GpDataset> {
    check_series(v_hv, v_lead)?;
    let mut inputs = Vec::with_capacity(v_hv.len() - ARX_ORDER);
    let mut targets = Vec::with_capacity(v_hv.len() - ARX_ORDER);
    for j in ARX_ORDER..v_hv.len() {
        let h = history_at(v_hv, v_lead, j);
        inputs.push(h.gp_input());
        targets.push(v_hv[j] - arx_step(c, &h));
    }
    GpDataset::new(inputs, targets)
}

/// Interchangeable discrepancy predictors.
#[derive(Debug, Clone, PartialEq)]
pub enum Discrepancy {
    Exact(GpModel),
    Sparse(SparseGpModel),
    /// Same prediction everywhere; for degenerate and diagnostic runs.
    Fixed(GpPrediction),
}

impl Discrepancy {
    pub fn predict(&self, x: &Input) -> GpPrediction {
        match self {
            Discrepancy::Exact(m) => m.predict(x),
            Discrepancy::Sparse(m) => m.predict(x),
            Discrepancy::Fixed(p) => *p,
        }
    }

    pub fn zero() -> Self {
        Discrepancy::Fixed(GpPrediction { mean: 0.0, var: 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HvModel {
    pub arx: ArxCoefficients,
    pub disc: Discrepancy,
}

impl HvModel {
    pub fn new(arx: ArxCoefficients, disc: Discrepancy) -> Self {
        Self { arx, disc }
    }
}

/// Distribution of ṽ^H_k: ARX mean shifted by the GP mean, with the GP variance.
pub fn combined_predict(m: &HvModel, h: &VelocityHistory) -> GpPrediction {
    let d = m.disc.predict(&h.gp_input());
    GpPrediction { mean: arx_step(&m.arx, h) + d.mean, var: d.var }
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch { expected: actual.len(), found: predicted.len() });
    }
    if actual.is_empty() {
        return Err(Error::Domain("rmse of empty series".into()));
    }
    let ss: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum();
    Ok((ss / actual.len() as f64).sqrt())
}

/// One-step-ahead predictions over a measured series.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepEval {
    pub actual: Vec<f64>,
    pub arx: Vec<f64>,
    pub combined: Vec<f64>,
}

impl OneStepEval {
    pub fn rmse_arx(&self) -> f64 {
        rmse(&self.arx, &self.actual).expect("aligned series")
    }

    pub fn rmse_combined(&self) -> f64 {
        rmse(&self.combined, &self.actual).expect("aligned series")
    }
}

pub fn one_step_eval(m: &HvModel, v_hv: &[f64], v_lead: &[f64]) -> Result<OneStepEval> {
    check_series(v_hv, v_lead)?;
    let n = v_hv.len() - ARX_ORDER;
    let mut out = OneStepEval { actual: Vec::with_capacity(n), arx: Vec::with_capacity(n), combined: Vec::with_capacity(n) };
    for j in ARX_ORDER..v_hv.len() {
        let h = history_at(v_hv, v_lead, j);
        let a = arx_step(&m.arx, &h);
        out.actual.push(v_hv[j]);
        out.arx.push(a);
        out.combined.push(combined_predict(m, &h).mean);
    }
    Ok(out)
}
