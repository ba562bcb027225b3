//! Closed-loop plant: kinematic AVs, the stochastic ARX+GP human driver and
//! the position belief used by the controller.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpPrediction;
use crate::hv::{arx_step, HvModel, VelocityHistory};
use crate::mpc::Controller;

/// Explicit Euler: position advances with the pre-update velocity.
pub fn av_step(v: f64, p: f64, a_cmd: f64, dt: f64) -> (f64, f64) {
    (v + dt * a_cmd, p + dt * v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonState {
    /// AV 1 is the platoon leader; the last AV is directly ahead of the HV.
    pub p_av: Vec<f64>,
    pub v_av: Vec<f64>,
    pub p_hv: f64,
    /// ARX velocity state of the HV and the matching lead-AV velocities.
    pub hist: VelocityHistory,
    pub k: usize,
}

impl PlatoonState {
    /// All vehicles at rest, leader at 0, each follower `spacing` behind.
    pub fn at_rest(n_av: usize, spacing: f64) -> Self {
        Self {
            p_av: (0..n_av).map(|n| 0.0 - n as f64 * spacing).collect(),
            v_av: vec![0.0; n_av],
            p_hv: -(n_av as f64) * spacing,
            hist: VelocityHistory::default(),
            k: 0,
        }
    }

    pub fn n_av(&self) -> usize {
        self.p_av.len()
    }

    pub fn lead_velocity(&self) -> f64 {
        *self.v_av.last().expect("at least one AV")
    }

    pub fn hv_gap(&self) -> f64 {
        self.p_av.last().expect("at least one AV") - self.p_hv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvBelief {
    pub mean: f64,
    pub var: f64,
}

impl HvBelief {
    pub fn exact(p: f64) -> Self {
        Self { mean: p, var: 0.0 }
    }
}

/// μ′ = μ + T v^H + T μ^d, Σ′ = Σ + T² Σ^d.
pub fn propagate_belief(b: &HvBelief, v_hv: f64, pred: &GpPrediction, dt: f64) -> HvBelief {
    HvBelief { mean: b.mean + dt * v_hv + dt * pred.mean, var: b.var + dt * dt * pred.var }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HvStep {
    /// Deterministic ARX velocity, fed back into the history.
    pub v_arx: f64,
    /// ARX velocity plus the sampled discrepancy; moves the vehicle.
    pub v_actual: f64,
    pub p_next: f64,
    pub pred: GpPrediction,
}

/// Advances the HV one sample. The discrepancy is drawn from the model's
/// posterior at (v^H_{k−1}, v^N_{k−1}); `lead_now` is v^N_k and enters the
/// history together with the ARX velocity.
pub fn hv_plant_step<R: rand::Rng>(
    model: &HvModel,
    hist: &mut VelocityHistory,
    p_hv: f64,
    lead_now: f64,
    dt: f64,
    rng: &mut R,
) -> HvStep {
    let v_arx = arx_step(&model.arx, hist);
    let pred = model.disc.predict(&hist.gp_input());
    let z: f64 = StandardNormal.sample(rng);
    let v_actual = v_arx + pred.mean + pred.var.sqrt() * z;
    hist.push(v_arx, lead_now);
    HvStep { v_arx, v_actual, p_next: p_hv + dt * v_actual, pred }
}

/// Piecewise-constant reference: the value of the last breakpoint at or before t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefSchedule(pub Vec<[f64; 2]>);

impl RefSchedule {
    pub fn at(&self, t: f64) -> f64 {
        let mut v = self.0.first().map(|b| b[1]).unwrap_or(0.0);
        for b in &self.0 {
            if t + 1e-9 >= b[0] {
                v = b[1];
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::InvalidConfig("reference schedule is empty".into()));
        }
        if self.0.windows(2).any(|w| w[1][0] <= w[0][0]) || self.0.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("reference breakpoints must be finite with increasing times".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_av: usize,
    pub spacing: f64,
    pub duration: f64,
    pub v_ref: RefSchedule,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { n_av: 2, spacing: 24.0, duration: 60.0, v_ref: RefSchedule(vec![[0.0, 20.0], [30.0, 10.0]]) }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_av < 1 {
            return Err(Error::InvalidConfig("n_av must be at least 1".into()));
        }
        if !(self.spacing > 0.0 && self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidConfig("spacing must be positive and duration non-negative".into()));
        }
        self.v_ref.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub p_av: Vec<f64>,
    pub v_av: Vec<f64>,
    pub a_av: Vec<f64>,
    pub p_hv: f64,
    pub v_hv: f64,
    /// One-step-ahead HV position belief.
    pub mu_hv: f64,
    pub sigma2_hv: f64,
    pub dist_av_hv: f64,
    /// Required HV gap one step ahead.
    pub bound: f64,
    pub solve_time: f64,
    pub slack_used: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub n_av: usize,
    pub dt: f64,
    pub rows: Vec<LogRow>,
    /// Predicted Σ^{p_H} along each solved horizon.
    pub horizon_sigma: Vec<Vec<f64>>,
    pub initial: PlatoonState,
    pub final_state: PlatoonState,
}

impl TrajectoryLog {
    /// Smallest HV gap over logged steps and the final state.
    pub fn min_hv_gap(&self) -> f64 {
        self.rows.iter().map(|r| r.dist_av_hv).fold(self.final_state.hv_gap(), f64::min)
    }

    pub fn slack_steps(&self) -> usize {
        self.rows.iter().filter(|r| r.slack_used).count()
    }

    pub fn solve_times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.solve_time).collect()
    }
}

/// Runs the closed loop for `duration / dt` steps. `plant` drives the HV;
/// the controller sees only measured states.
pub fn run_scenario(cfg: &ScenarioConfig, controller: &mut Controller, plant: &HvModel, seed: u64) -> Result<TrajectoryLog> {
    cfg.validate()?;
    let mpc = *controller.config();
    let dt = mpc.dt;
    let steps = (cfg.duration / dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = PlatoonState::at_rest(cfg.n_av, cfg.spacing);
    let initial = state.clone();
    let mut rows = Vec::with_capacity(steps);
    let mut horizon_sigma = Vec::with_capacity(steps);
    controller.reset();
    for k in 0..steps {
        let t = k as f64 * dt;
        let v_ref: Vec<f64> = (1..=mpc.horizon).map(|i| cfg.v_ref.at((k + i) as f64 * dt)).collect();
        let out = controller.mpc_step(&state, &HvBelief::exact(state.p_hv), &v_ref).map_err(|e| e.at_step(k))?;
        let sol = &out.solution;
        let lead_now = state.lead_velocity();
        let hv = hv_plant_step(plant, &mut state.hist, state.p_hv, lead_now, dt, &mut rng);
        rows.push(LogRow {
            t,
            p_av: state.p_av.clone(),
            v_av: state.v_av.clone(),
            a_av: out.accel.clone(),
            p_hv: state.p_hv,
            v_hv: hv.v_actual,
            mu_hv: sol.mu_hv[1],
            sigma2_hv: sol.sigma_hv[1],
            dist_av_hv: state.hv_gap(),
            bound: sol.hv_bound[1],
            solve_time: out.wall.as_secs_f64(),
            slack_used: sol.slack_used,
        });
        horizon_sigma.push(sol.sigma_hv.clone());
        for n in 0..cfg.n_av {
            let (v, p) = av_step(state.v_av[n], state.p_av[n], out.accel[n], dt);
            state.v_av[n] = v;
            state.p_av[n] = p;
        }
        state.p_hv = hv.p_next;
        state.k = k + 1;
    }
    Ok(TrajectoryLog { n_av: cfg.n_av, dt, rows, horizon_sigma, initial, final_state: state })
}
