//! Synthetic driver-following data: piecewise-constant lead profiles and a
//! delayed second-order ground-truth driver with a smooth distortion.

use nalgebra::{Matrix3, Vector2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpDataset;
use crate::hv::{build_discrepancy_dataset, ArxCoefficients};

pub const V_MIN: f64 = 0.0;
pub const V_MAX: f64 = 35.0;

/// K (T_z s + 1) e^{−T_d s} / (T_w² s² + 2 γ T_w s + 1), plus output
/// distortion `nonlinearity · sin(v/5)` and Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriverResponseConfig {
    pub gain: f64,
    pub t_zero: f64,
    pub damping: f64,
    pub t_natural: f64,
    pub t_delay: f64,
    pub noise_std: f64,
    pub nonlinearity: f64,
}

impl Default for DriverResponseConfig {
    fn default() -> Self {
        Self { gain: 1.0, t_zero: 0.5, damping: 0.7, t_natural: 1.0, t_delay: 0.75, noise_std: 0.4, nonlinearity: 0.3 }
    }
}

impl DriverResponseConfig {
    /// Continuous-time equivalent of the published ARX coefficients, without
    /// distortion or noise.
    pub fn arx_matched() -> Self {
        Self { gain: 1.0, t_zero: 19.7, damping: 0.705, t_natural: 12.64, t_delay: 1.25, noise_std: 0.0, nonlinearity: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.gain, self.t_zero, self.damping, self.t_natural, self.t_delay, self.noise_std, self.nonlinearity];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("driver parameters must be finite".into()));
        }
        if self.t_natural <= 0.0 || self.t_delay < 0.0 || self.noise_std < 0.0 || self.damping <= 0.0 {
            return Err(Error::InvalidConfig(format!("invalid driver parameters: {self:?}")));
        }
        Ok(())
    }

    /// Delay in whole samples.
    pub fn delay_steps(&self, dt: f64) -> usize {
        (self.t_delay / dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioProfile {
    pub levels: Vec<f64>,
    pub hold_min: f64,
    pub hold_max: f64,
    /// Ramp rate between plateaus (m/s²).
    pub ramp_accel: f64,
    pub duration: f64,
    pub seed: u64,
}

impl Default for ScenarioProfile {
    fn default() -> Self {
        Self { levels: vec![10.0, 15.0, 20.0], hold_min: 40.0, hold_max: 80.0, ramp_accel: 5.0, duration: 200.0, seed: 0 }
    }
}

impl ScenarioProfile {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.iter().any(|v| !(V_MIN..=V_MAX).contains(v)) {
            return Err(Error::InvalidConfig(format!("plateau levels must lie in [0, 35]: {:?}", self.levels)));
        }
        if !(self.hold_min >= 20.0 && self.hold_max >= self.hold_min) {
            return Err(Error::InvalidConfig("plateau holds must be at least 20 s, hold_max ≥ hold_min".into()));
        }
        if !(self.ramp_accel > 0.0 && self.ramp_accel <= 5.0) {
            return Err(Error::InvalidConfig("ramp_accel must be in (0, 5] m/s²".into()));
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidConfig("duration must be non-negative".into()));
        }
        Ok(())
    }
}

/// Lead velocity sampled every `dt`, starting from rest. Plateau order is a
/// sequence of shuffled permutations of the levels with no immediate repeats.
pub fn generate_lead_profile(p: &ScenarioProfile, dt: f64) -> Result<Vec<f64>> {
    p.validate()?;
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig("sample time must be positive".into()));
    }
    let n = (p.duration / dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut out = Vec::with_capacity(n);
    let mut cur = 0.0f64;
    let mut queue: Vec<f64> = Vec::new();
    let mut last: Option<f64> = None;
    let dv = p.ramp_accel * dt;
    while out.len() < n {
        if queue.is_empty() {
            let mut perm = p.levels.clone();
            perm.shuffle(&mut rng);
            if perm.len() > 1 && Some(perm[0]) == last {
                perm.swap(0, 1);
            }
            perm.reverse();
            queue = perm;
        }
        let target = queue.pop().expect("refilled above");
        last = Some(target);
        while out.len() < n && cur != target {
            cur = if (target - cur).abs() <= dv { target } else { cur + dv * (target - cur).signum() };
            out.push(cur);
        }
        let hold = rng.random_range(p.hold_min..=p.hold_max);
        let steps = (hold / dt).round() as usize;
        for _ in 0..steps {
            if out.len() >= n {
                break;
            }
            out.push(cur);
        }
    }
    Ok(out)
}

/// ZOH discretization of the controllable canonical realization.
struct DiscreteDriver {
    ad: nalgebra::Matrix2<f64>,
    bd: Vector2<f64>,
    c: Vector2<f64>,
}

fn discretize(cfg: &DriverResponseConfig, dt: f64) -> DiscreteDriver {
    let tw2 = cfg.t_natural * cfg.t_natural;
    let a0 = 1.0 / tw2;
    let a1 = 2.0 * cfg.damping / cfg.t_natural;
    let aug = Matrix3::new(0.0, 1.0, 0.0, -a0, -a1, 1.0, 0.0, 0.0, 0.0) * dt;
    let e = aug.exp();
    DiscreteDriver {
        ad: e.fixed_view::<2, 2>(0, 0).into_owned(),
        bd: e.fixed_view::<2, 1>(0, 2).into_owned(),
        c: Vector2::new(cfg.gain / tw2, cfg.gain * cfg.t_zero / tw2),
    }
}

/// HV velocity produced by the ground-truth driver following `lead`.
pub fn simulate_ground_truth_driver(cfg: &DriverResponseConfig, lead: &[f64], dt: f64, seed: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    if lead.is_empty() {
        return Err(Error::SeriesTooShort { len: 0, min: 1 });
    }
    let sys = discretize(cfg, dt);
    let d = cfg.delay_steps(dt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut x = Vector2::zeros();
    let mut out = Vec::with_capacity(lead.len());
    for k in 0..lead.len() {
        let y = sys.c.dot(&x);
        let u = if k >= d { lead[k - d] } else { 0.0 };
        x = sys.ad * x + sys.bd * u;
        let distorted = y + cfg.nonlinearity * (y / 5.0).sin();
        let e = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        out.push((distorted + e).clamp(V_MIN, V_MAX));
    }
    Ok(out)
}

/// One recorded following run at a fixed sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveSeries {
    pub dt: f64,
    pub v_hv: Vec<f64>,
    pub v_lead: Vec<f64>,
}

impl DriveSeries {
    pub fn new(dt: f64, v_hv: Vec<f64>, v_lead: Vec<f64>) -> Result<Self> {
        if v_hv.len() != v_lead.len() {
            return Err(Error::DimensionMismatch { expected: v_hv.len(), found: v_lead.len() });
        }
        if !(dt > 0.0) {
            return Err(Error::Domain("sample time must be positive".into()));
        }
        Ok(Self { dt, v_hv, v_lead })
    }

    pub fn len(&self) -> usize {
        self.v_hv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_hv.is_empty()
    }

    pub fn discrepancy(&self, arx: &ArxCoefficients) -> Result<GpDataset> {
        build_discrepancy_dataset(&self.v_hv, &self.v_lead, arx)
    }
}

/// Indices 0, s, 2s, … below `n` with s = round(1 / fraction).
pub fn stride_indices(n: usize, fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("training fraction {fraction} outside (0, 1]")));
    }
    let s = (1.0 / fraction).round().max(1.0) as usize;
    Ok((0..n).step_by(s).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub train_sources: usize,
    pub test_sets: usize,
    pub dt: f64,
    pub train_fraction: f64,
    /// Set i uses seed `seed + i` for its profile and `seed + i + 1000` for driver noise.
    pub seed: u64,
    pub driver: DriverResponseConfig,
    pub profile: ScenarioProfile,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            train_sources: 6,
            test_sets: 3,
            dt: 0.25,
            train_fraction: 0.2,
            seed: 1,
            driver: DriverResponseConfig::default(),
            profile: ScenarioProfile::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetRole {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSet {
    pub name: String,
    pub role: SetRole,
    pub seed: u64,
    pub series: DriveSeries,
    /// Indices into the set's discrepancy samples used for training.
    pub stride: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sets: Vec<CorpusSet>,
}

impl Corpus {
    pub fn training_dataset(&self, arx: &ArxCoefficients) -> Result<GpDataset> {
        let parts = self
            .sets
            .iter()
            .filter(|s| s.role == SetRole::Train)
            .map(|s| s.series.discrepancy(arx)?.select(&s.stride))
            .collect::<Result<Vec<_>>>()?;
        GpDataset::concat(&parts)
    }

    pub fn test_sets(&self) -> impl Iterator<Item = &CorpusSet> {
        self.sets.iter().filter(|s| s.role == SetRole::Test)
    }
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    let n_sets = cfg.train_sources + cfg.test_sets;
    if cfg.train_sources == 0 || cfg.test_sets == 0 {
        return Err(Error::InvalidConfig("corpus needs at least one training source and one test set".into()));
    }
    let mut sets = Vec::with_capacity(n_sets);
    for i in 0..n_sets {
        let seed = cfg.seed + i as u64;
        let profile = ScenarioProfile { seed, ..cfg.profile.clone() };
        let lead = generate_lead_profile(&profile, cfg.dt)?;
        let hv = simulate_ground_truth_driver(&cfg.driver, &lead, cfg.dt, seed + 1000)?;
        let series = DriveSeries::new(cfg.dt, hv, lead)?;
        let role = if i < cfg.train_sources { SetRole::Train } else { SetRole::Test };
        let stride = match role {
            SetRole::Train => stride_indices(series.len().saturating_sub(crate::hv::ARX_ORDER), cfg.train_fraction)?,
            SetRole::Test => Vec::new(),
        };
        sets.push(CorpusSet { name: format!("set_{i:02}.csv"), role, seed, series, stride });
    }
    Ok(Corpus { sets })
}
