//! Receding-horizon control of the AV platoon: nominal MPC and the
//! chance-constrained GP-MPC, both posed as dense QPs over AV accelerations.

pub mod qp;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpPrediction;
use crate::hv::{ArxCoefficients, Discrepancy, HvModel, ARX_ORDER};
use crate::linalg::normal_inv_cdf;
use crate::sim::{HvBelief, PlatoonState};
use qp::{QpData, QpOptions, QpOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Nominal,
    Gp,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nominal" => Ok(Mode::Nominal),
            "gp" => Ok(Mode::Gp),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}` (expected nominal or gp)"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Nominal => "nominal",
            Mode::Gp => "gp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q1: f64,
    pub q2: f64,
    pub r: f64,
    pub dt: f64,
    pub delta: f64,
    pub delta_ext: f64,
    pub p_def: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub mode: Mode,
    /// Try the previous step's active constraints first.
    pub warm_start: bool,
    /// L1 price per meter of distance-constraint slack.
    pub slack_penalty: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 6,
            q1: 5.0,
            q2: 5.0,
            r: 20.0,
            dt: 0.25,
            delta: 20.0,
            delta_ext: 0.0,
            p_def: 0.95,
            v_min: -35.0,
            v_max: 35.0,
            a_min: -5.0,
            a_max: 5.0,
            mode: Mode::Gp,
            warm_start: true,
            slack_penalty: 1e6,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if !(self.q1 > 0.0 && self.q2 > 0.0 && self.r > 0.0) {
            return bad("weights q1, q2, r must be positive");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.p_def > 0.5 && self.p_def < 1.0) {
            return bad("p_def must lie in (0.5, 1)");
        }
        if !(self.delta > 0.0 && self.delta_ext >= 0.0) {
            return bad("delta must be positive and delta_ext non-negative");
        }
        if !(self.a_min < self.a_max && self.v_min < self.v_max) {
            return bad("bounds must satisfy min < max");
        }
        if !(self.slack_penalty > 0.0) {
            return bad("slack_penalty must be positive");
        }
        Ok(())
    }
}

/// Δ + Δ_ext + Φ⁻¹(p_def)·√Σ_p.
pub fn tighten_distance(sigma_p: f64, cfg: &MpcConfig) -> Result<f64> {
    if !(sigma_p >= 0.0) {
        return Err(Error::Domain(format!("position variance {sigma_p} is negative")));
    }
    Ok(cfg.delta + cfg.delta_ext + normal_inv_cdf(cfg.p_def)? * sigma_p.sqrt())
}

/// GP mean/variance per horizon step, frozen for one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct GpTrajectoryCache {
    pub entries: Vec<GpPrediction>,
}

impl GpTrajectoryCache {
    pub fn zeros(n: usize) -> Self {
        Self { entries: vec![GpPrediction { mean: 0.0, var: 0.0 }; n] }
    }
}

/// Entry i is the discrepancy at (v^H_{k+i−1}, v^N_{k+i−1}). Entry 0 uses the
/// measured lags; later entries reuse the previous solution's trajectory,
/// shifted one step, or repeat the measured input when there is none.
pub fn gp_trajectory_cache(disc: &Discrepancy, state: &PlatoonState, prev: Option<&MpcSolution>, horizon: usize) -> GpTrajectoryCache {
    let measured = state.hist.gp_input();
    let entries = (0..horizon)
        .map(|i| {
            let x = match prev {
                Some(p) if i >= 1 && i < p.v_hv.len() && i < p.v_lead.len() => [p.v_hv[i], p.v_lead[i]],
                _ => measured,
            };
            disc.predict(&x)
        })
        .collect();
    GpTrajectoryCache { entries }
}

/// c0 + coefᵀx over the stacked accelerations.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub c0: f64,
    pub coef: Vec<f64>,
}

impl Affine {
    fn constant(c0: f64, n: usize) -> Self {
        Self { c0, coef: vec![0.0; n] }
    }

    fn axpy(&mut self, a: f64, other: &Affine) {
        self.c0 += a * other.c0;
        for (c, o) in self.coef.iter_mut().zip(&other.coef) {
            *c += a * o;
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.c0 + self.coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    fn is_constant(&self) -> bool {
        self.coef.iter().all(|c| *c == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// Gap between AV n−1 and AV n at horizon step i.
    AvGap { n: usize, i: usize },
    /// Gap between the last AV and the HV mean at horizon step i.
    HvGap { i: usize },
    Bound,
}

impl RowKind {
    fn softenable(&self) -> bool {
        !matches!(self, RowKind::Bound)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub qp: QpData,
    pub cost_const: f64,
    pub kinds: Vec<RowKind>,
    pub n_av: usize,
    pub horizon: usize,
    /// [n][i], i = 0..=N
    pub v_av: Vec<Vec<Affine>>,
    pub p_av: Vec<Vec<Affine>>,
    /// v^H_{k+i}, i = 0..N−1
    pub v_hv: Vec<Affine>,
    /// v^N_{k+i}, i = 0..N−1
    pub v_lead: Vec<Affine>,
    /// μ^{p_H}_{k+i}, i = 0..=N
    pub mu_hv: Vec<Affine>,
    pub sigma_hv: Vec<f64>,
    /// Required HV gap at i = 0..=N (entry 0 unused by constraints).
    pub hv_bound: Vec<f64>,
    pub cache: Option<GpTrajectoryCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// [n][i], i = 0..N−1
    pub accel: Vec<Vec<f64>>,
    pub v_av: Vec<Vec<f64>>,
    pub p_av: Vec<Vec<f64>>,
    pub v_hv: Vec<f64>,
    pub v_lead: Vec<f64>,
    pub mu_hv: Vec<f64>,
    pub sigma_hv: Vec<f64>,
    pub hv_bound: Vec<f64>,
    /// Slack per softened row; empty when the hard problem was feasible.
    pub slack: Vec<f64>,
    pub slack_used: bool,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub active: Vec<usize>,
}

impl MpcSolution {
    pub fn first_accels(&self) -> Vec<f64> {
        self.accel.iter().map(|a| a[0]).collect()
    }
}

/// Stacks the horizon into a QP over a[n·N + i]. `v_ref[i]` is the reference
/// for step k+i+1. With `cache = None` the HV model is the plain ARX and the
/// HV gap uses Δ.
pub fn build_qp(
    state: &PlatoonState,
    belief: &HvBelief,
    cache: Option<&GpTrajectoryCache>,
    arx: &ArxCoefficients,
    v_ref: &[f64],
    cfg: &MpcConfig,
) -> Result<QpProblem> {
    let n_av = state.n_av();
    let nn = cfg.horizon;
    let nx = n_av * nn;
    let t = cfg.dt;
    if v_ref.len() != nn {
        return Err(Error::DimensionMismatch { expected: nn, found: v_ref.len() });
    }
    if let Some(c) = cache {
        if c.entries.len() != nn {
            return Err(Error::DimensionMismatch { expected: nn, found: c.entries.len() });
        }
    }
    let idx = |n: usize, i: usize| n * nn + i;

    let mut v_av = Vec::with_capacity(n_av);
    let mut p_av = Vec::with_capacity(n_av);
    for n in 0..n_av {
        let mut vs = vec![Affine::constant(state.v_av[n], nx)];
        let mut ps = vec![Affine::constant(state.p_av[n], nx)];
        for i in 1..=nn {
            let mut v = vs[i - 1].clone();
            v.coef[idx(n, i - 1)] += t;
            let mut p = ps[i - 1].clone();
            p.axpy(t, &vs[i - 1]);
            vs.push(v);
            ps.push(p);
        }
        v_av.push(vs);
        p_av.push(ps);
    }

    // Lead velocity v^N_{k+s}: measured lags for s < 0, last AV's trajectory otherwise.
    let last = n_av - 1;
    let lead_at = |s: isize| -> Affine {
        if s < 0 {
            Affine::constant(state.hist.lead[(-s - 1) as usize], nx)
        } else {
            v_av[last][s as usize].clone()
        }
    };
    let mut v_hv: Vec<Affine> = Vec::with_capacity(nn);
    for i in 0..nn as isize {
        let mut v = Affine::constant(0.0, nx);
        for j in 1..=ARX_ORDER as isize {
            let s = i - j;
            let past = if s < 0 { Affine::constant(state.hist.hv[(-s - 1) as usize], nx) } else { v_hv[s as usize].clone() };
            v.axpy(-arx.c[(j - 1) as usize], &past);
            v.axpy(arx.b[(j - 1) as usize], &lead_at(s));
        }
        v_hv.push(v);
    }
    let v_lead: Vec<Affine> = (0..nn as isize).map(lead_at).collect();

    let mut mu_hv = vec![Affine::constant(belief.mean, nx)];
    let mut sigma_hv = vec![belief.var];
    for i in 0..nn {
        let (md, sd) = cache.map(|c| (c.entries[i].mean, c.entries[i].var)).unwrap_or((0.0, 0.0));
        let mut mu = mu_hv[i].clone();
        mu.axpy(t, &v_hv[i]);
        mu.c0 += t * md;
        mu_hv.push(mu);
        sigma_hv.push(sigma_hv[i] + t * t * sd);
    }
    let hv_bound = match cache {
        Some(_) => sigma_hv.iter().map(|s| tighten_distance(*s, cfg)).collect::<Result<Vec<_>>>()?,
        None => vec![cfg.delta; nn + 1],
    };

    // Cost: ½xᵀHx + gᵀx + const.
    let mut h = DMatrix::<f64>::zeros(nx, nx);
    let mut g = DVector::<f64>::zeros(nx);
    let mut cost_const = 0.0;
    let mut add_sq = |w: f64, e: &Affine| {
        let nz: Vec<usize> = (0..nx).filter(|&k| e.coef[k] != 0.0).collect();
        for &a in &nz {
            g[a] += 2.0 * w * e.c0 * e.coef[a];
            for &b in &nz {
                h[(a, b)] += 2.0 * w * e.coef[a] * e.coef[b];
            }
        }
        cost_const += w * e.c0 * e.c0;
    };
    for i in 1..=nn {
        let mut e = v_av[0][i].clone();
        e.c0 -= v_ref[i - 1];
        add_sq(cfg.q1, &e);
        for n in 1..n_av {
            let mut e = v_av[n][i].clone();
            e.axpy(-1.0, &v_av[n - 1][i]);
            add_sq(cfg.q2, &e);
        }
    }
    for k in 0..nx {
        h[(k, k)] += 2.0 * cfg.r;
    }

    // Constraint rows aᵀx ≥ b.
    let mut rows: Vec<(Vec<f64>, f64, RowKind)> = Vec::new();
    let mut push_ge = |e: &Affine, lo: f64, kind: RowKind| {
        // Rows with no decision dependence cannot be influenced and are skipped.
        if !e.is_constant() {
            rows.push((e.coef.clone(), lo - e.c0, kind));
        }
    };
    for i in 1..=nn {
        for n in 1..n_av {
            let mut gap = p_av[n - 1][i].clone();
            gap.axpy(-1.0, &p_av[n][i]);
            push_ge(&gap, cfg.delta, RowKind::AvGap { n, i });
        }
        let mut gap = p_av[last][i].clone();
        gap.axpy(-1.0, &mu_hv[i]);
        push_ge(&gap, hv_bound[i], RowKind::HvGap { i });
    }
    for vs in &v_av {
        for v in &vs[1..=nn] {
            push_ge(v, cfg.v_min, RowKind::Bound);
            let mut neg = v.clone();
            neg.c0 = -neg.c0;
            neg.coef.iter_mut().for_each(|c| *c = -*c);
            push_ge(&neg, -cfg.v_max, RowKind::Bound);
        }
    }
    for k in 0..nx {
        let mut e = Affine::constant(0.0, nx);
        e.coef[k] = 1.0;
        push_ge(&e, cfg.a_min, RowKind::Bound);
        e.coef[k] = -1.0;
        push_ge(&e, -cfg.a_max, RowKind::Bound);
    }
    let m = rows.len();
    let mut c = DMatrix::<f64>::zeros(m, nx);
    let mut d = DVector::<f64>::zeros(m);
    let mut kinds = Vec::with_capacity(m);
    for (r, (coef, b, kind)) in rows.into_iter().enumerate() {
        for k in 0..nx {
            c[(r, k)] = coef[k];
        }
        d[r] = b;
        kinds.push(kind);
    }
    Ok(QpProblem {
        qp: QpData { h, g, c, d },
        cost_const,
        kinds,
        n_av,
        horizon: nn,
        v_av,
        p_av,
        v_hv,
        v_lead,
        mu_hv,
        sigma_hv,
        hv_bound,
        cache: cache.cloned(),
    })
}

fn assemble(p: &QpProblem, x: &[f64], slack: Vec<f64>, sol: &qp::QpSolution, objective: f64) -> MpcSolution {
    let nn = p.horizon;
    let ev = |v: &Vec<Affine>| v.iter().map(|e| e.eval(x)).collect::<Vec<_>>();
    MpcSolution {
        accel: (0..p.n_av).map(|n| x[n * nn..(n + 1) * nn].to_vec()).collect(),
        v_av: p.v_av.iter().map(ev).collect(),
        p_av: p.p_av.iter().map(ev).collect(),
        v_hv: ev(&p.v_hv),
        v_lead: ev(&p.v_lead),
        mu_hv: ev(&p.mu_hv),
        sigma_hv: p.sigma_hv.clone(),
        hv_bound: p.hv_bound.clone(),
        slack_used: !slack.is_empty(),
        slack,
        objective,
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
        active: sol.active.clone(),
    }
}

/// Quadratic price on slack, small next to the L1 term; keeps the slacked
/// Hessian strictly convex.
const SLACK_QUAD: f64 = 1.0;

/// Solves the hard problem; if it is infeasible, re-solves with one
/// non-negative slack per distance row and flags the result.
pub fn solve_qp(p: &QpProblem, penalty: f64, priority: &[usize]) -> Result<MpcSolution> {
    let opts = QpOptions::default();
    if let QpOutcome::Solved(s) = qp::solve(&p.qp, &opts, priority)? {
        let x: Vec<f64> = s.x.iter().copied().collect();
        let obj = s.objective + p.cost_const;
        return Ok(assemble(p, &x, Vec::new(), &s, obj));
    }
    let nx = p.qp.h.nrows();
    let soft: Vec<usize> = (0..p.kinds.len()).filter(|&r| p.kinds[r].softenable()).collect();
    let ns = soft.len();
    let m = p.kinds.len();
    let mut h = DMatrix::<f64>::zeros(nx + ns, nx + ns);
    h.view_mut((0, 0), (nx, nx)).copy_from(&p.qp.h);
    let mut g = DVector::<f64>::zeros(nx + ns);
    g.rows_mut(0, nx).copy_from(&p.qp.g);
    for k in 0..ns {
        h[(nx + k, nx + k)] = SLACK_QUAD;
        g[nx + k] = penalty;
    }
    let mut c = DMatrix::<f64>::zeros(m + ns, nx + ns);
    c.view_mut((0, 0), (m, nx)).copy_from(&p.qp.c);
    let mut d = DVector::<f64>::zeros(m + ns);
    d.rows_mut(0, m).copy_from(&p.qp.d);
    for (k, &r) in soft.iter().enumerate() {
        c[(r, nx + k)] = 1.0;
        c[(m + k, nx + k)] = 1.0;
    }
    let relaxed = QpData { h, g, c, d };
    match qp::solve(&relaxed, &opts, &[])? {
        QpOutcome::Solved(s) => {
            let x: Vec<f64> = s.x.iter().take(nx).copied().collect();
            let slack: Vec<f64> = s.x.iter().skip(nx).copied().collect();
            let obj = s.objective + p.cost_const;
            let mut sol = assemble(p, &x, slack, &s, obj);
            sol.active.retain(|&r| r < m);
            Ok(sol)
        }
        QpOutcome::Infeasible => {
            Err(Error::SolverFailure { step: None, reason: "slacked problem infeasible; check velocity and acceleration bounds".into() })
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub accel: Vec<f64>,
    pub solution: MpcSolution,
    pub wall: Duration,
}

/// Holds the previous solution between steps; one instance per closed loop.
#[derive(Debug, Clone)]
pub struct Controller {
    cfg: MpcConfig,
    arx: ArxCoefficients,
    disc: Option<Discrepancy>,
    prev: Option<MpcSolution>,
}

impl Controller {
    pub fn nominal(cfg: MpcConfig, arx: ArxCoefficients) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg: MpcConfig { mode: Mode::Nominal, ..cfg }, arx, disc: None, prev: None })
    }

    pub fn gp(cfg: MpcConfig, model: HvModel) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg: MpcConfig { mode: Mode::Gp, ..cfg }, arx: model.arx, disc: Some(model.disc), prev: None })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn previous(&self) -> Option<&MpcSolution> {
        self.prev.as_ref()
    }

    pub fn reset(&mut self) {
        self.prev = None;
    }

    /// One receding-horizon step: returns first-step accelerations, the full
    /// solution and the wall time of cache build plus QP.
    pub fn mpc_step(&mut self, state: &PlatoonState, belief: &HvBelief, v_ref: &[f64]) -> Result<StepOutput> {
        let start = Instant::now();
        let cache = self.disc.as_ref().map(|d| gp_trajectory_cache(d, state, self.prev.as_ref(), self.cfg.horizon));
        let problem = build_qp(state, belief, cache.as_ref(), &self.arx, v_ref, &self.cfg)?;
        let priority: &[usize] = match (&self.prev, self.cfg.warm_start) {
            (Some(p), true) => &p.active,
            _ => &[],
        };
        let solution = solve_qp(&problem, self.cfg.slack_penalty, priority)?;
        let wall = start.elapsed();
        let accel = solution.first_accels();
        self.prev = Some(solution.clone());
        Ok(StepOutput { accel, solution, wall })
    }
}
