//! Acceptance gate: one printed PASS/FAIL line per criterion.
//!
//! All criteria share one lock so the timing checks never compete with
//! other work, and one lazily trained model set.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use platoon_core::config::RunConfig;
use platoon_core::datagen::{generate_corpus, Corpus};
use platoon_core::gp::{log_marginal_likelihood, se_kernel, GpDataset, GpHyperparams, GpModel, GpPrediction, Input};
use platoon_core::hv::{arx_rollout, arx_step, ArxCoefficients, Discrepancy, HvModel, VelocityHistory};
use platoon_core::linalg::normal_inv_cdf;
use platoon_core::mpc::{tighten_distance, Controller, Mode, MpcConfig, MpcSolution};
use platoon_core::pipeline::{self, ModelPair, SetScore, TrainedModels};
use platoon_core::report::median;
use platoon_core::sim::{av_step, hv_plant_step, propagate_belief, HvBelief, PlatoonState, TrajectoryLog};
use platoon_core::sparse::{fic_precompute, stride_init, InducingSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

static LOCK: Mutex<()> = Mutex::new(());

fn lock() -> MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n} [{name}]: {} | {detail}\n", if pass { "PASS" } else { "FAIL" });
    // Written past the test harness capture so the line always shows.
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

struct Trained {
    cfg: RunConfig,
    corpus: Corpus,
    trained: TrainedModels,
    secs: f64,
}

fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let t = Instant::now();
        let cfg = RunConfig::default();
        let corpus = generate_corpus(&cfg.datagen).expect("corpus");
        let trained = pipeline::train_models(&corpus, &cfg, ArxCoefficients::published()).expect("training");
        Trained { cfg, corpus, trained, secs: t.elapsed().as_secs_f64() }
    })
}

const SEEDS: u64 = 20;

struct Loops {
    gp: Vec<TrajectoryLog>,
    nominal: Vec<TrajectoryLog>,
    secs: f64,
}

/// Braking scenario over 20 seeds in both modes, interleaved so slow
/// drift in machine load hits both modes alike.
fn loops() -> &'static Loops {
    static L: OnceLock<Loops> = OnceLock::new();
    L.get_or_init(|| {
        let tr = trained();
        let t = Instant::now();
        let (mut gp, mut nominal) = (Vec::new(), Vec::new());
        for seed in 0..SEEDS {
            nominal.push(pipeline::run_closed_loop(&tr.cfg, Mode::Nominal, Some(&tr.trained.models), seed).expect("nominal run"));
            gp.push(pipeline::run_closed_loop(&tr.cfg, Mode::Gp, Some(&tr.trained.models), seed).expect("gp run"));
        }
        Loops { gp, nominal, secs: t.elapsed().as_secs_f64() }
    })
}

/// Steps after which the rollout stays within 2% of `level`.
fn settling_steps(v: &[f64], level: f64) -> usize {
    v.iter().rposition(|x| (x - level).abs() > 0.02 * level).map_or(0, |k| k + 1)
}

#[test]
fn criterion_1_arx_fidelity() {
    let _g = lock();
    let t = Instant::now();
    let arx = ArxCoefficients::published();
    let settle: Vec<(f64, usize)> = [10.0, 15.0, 20.0]
        .iter()
        .map(|&level| (level, settling_steps(&arx_rollout(&arx, VelocityHistory::default(), &vec![level; 1000]), level)))
        .collect();
    let hand = arx_step(&arx, &VelocityHistory::new([10.0; 4], [15.0, 10.0, 10.0, 10.0]).unwrap());
    let secs = t.elapsed().as_secs_f64();
    let settle_ok = settle.iter().all(|(_, k)| *k <= 200);
    let hand_ok = (hand - 10.0315).abs() <= 1e-6;
    let pass = settle_ok && hand_ok && secs < 1.0;
    verdict(1, "ARX fidelity", pass, &format!("settling steps {settle:?} (limit 200), one-step {hand:.7} (10.0315 ± 1e-6), {secs:.3} s"));
    assert!(pass);
}

fn random_instance(rng: &mut ChaCha8Rng) -> (GpDataset, GpHyperparams) {
    let m = rng.random_range(2..=20);
    let inputs: Vec<Input> = (0..m).map(|_| [rng.random_range(0.0..35.0), rng.random_range(0.0..35.0)]).collect();
    let targets = inputs.iter().map(|x| (x[0] / 5.0).sin() + 0.1 * x[1] + rng.random_range(-0.2..0.2)).collect();
    let h = GpHyperparams::new(
        rng.random_range(0.2..3.0),
        [rng.random_range(1.0..100.0), rng.random_range(1.0..100.0)],
        rng.random_range(0.01..0.5),
    )
    .unwrap();
    (GpDataset::new(inputs, targets).unwrap(), h)
}

/// Posterior through an explicit inverse of K + σ²I.
fn inverse_oracle(data: &GpDataset, h: &GpHyperparams, x: &Input) -> (f64, f64) {
    let m = data.len();
    let k = DMatrix::from_fn(m, m, |i, j| {
        se_kernel(&data.inputs()[i], &data.inputs()[j], h) + if i == j { h.noise_var() } else { 0.0 }
    });
    let kinv = k.lu().try_inverse().expect("invertible");
    let ks = DVector::from_fn(m, |i, _| se_kernel(&data.inputs()[i], x, h));
    let y = DVector::from_column_slice(data.targets());
    ((ks.transpose() * &kinv * y)[0], h.signal_var() - (ks.transpose() * kinv * ks)[0])
}

#[test]
fn criterion_2_gp_correctness() {
    let _g = lock();
    let model = &trained().trained.models.full;
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut post_err, mut grad_err) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let (data, h) = random_instance(&mut rng);
        let model = GpModel::new(data.clone(), h).unwrap();
        for _ in 0..5 {
            let x = [rng.random_range(0.0..35.0), rng.random_range(0.0..35.0)];
            let p = model.predict(&x);
            let (mu, var) = inverse_oracle(&data, &h, &x);
            post_err = post_err.max((p.mean - mu).abs()).max((p.var - var.max(0.0)).abs());
        }
        let (_, grad) = log_marginal_likelihood(&h, &data).unwrap();
        let base = h.to_log_vec();
        for d in 0..4 {
            let step = 1e-5;
            let f = |s: f64| {
                let mut v = base;
                v[d] += s;
                log_marginal_likelihood(&GpHyperparams::from_log(&v), &data).unwrap().0
            };
            let fd = (f(step) - f(-step)) / (2.0 * step);
            grad_err = grad_err.max((grad[d] - fd).abs() / fd.abs().max(1e-3));
        }
    }
    let sf2 = model.hyper().signal_var();
    let mut var_ok = true;
    for i in 0..50 {
        for j in 0..50 {
            let v = model.predict(&[35.0 * i as f64 / 49.0, 35.0 * j as f64 / 49.0]).var;
            var_ok &= (0.0..=sf2).contains(&v);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = post_err <= 1e-8 && grad_err < 1e-4 && var_ok && secs < 30.0;
    verdict(
        2,
        "GP correctness",
        pass,
        &format!("posterior vs inverse {post_err:.2e} (≤ 1e-8), gradient rel err {grad_err:.2e} (< 1e-4), grid variance in [0, σ_f²]: {var_ok}, {secs:.2} s"),
    );
    assert!(pass);
}

#[test]
fn criterion_3_sparse_gp() {
    let _g = lock();
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut exact_err = 0.0f64;
    for _ in 0..20 {
        let (data, h) = random_instance(&mut rng);
        let full = GpModel::new(data.clone(), h).unwrap();
        let sparse = fic_precompute(&h, &InducingSet::new(data.inputs().to_vec()).unwrap(), &data).unwrap();
        for _ in 0..10 {
            let x = [rng.random_range(0.0..35.0), rng.random_range(0.0..35.0)];
            let (a, b) = (full.predict(&x), sparse.predict(&x));
            exact_err = exact_err.max((a.mean - b.mean).abs()).max((a.var - b.var).abs());
        }
    }

    let m = 2000;
    let inputs: Vec<Input> = (0..m).map(|_| [rng.random_range(5.0..25.0), rng.random_range(5.0..25.0)]).collect();
    let targets = inputs.iter().map(|x| 0.3 * (x[0] / 5.0).sin() + 0.05 * (x[1] - x[0]) + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    let data = GpDataset::new(inputs, targets).unwrap();
    let h = GpHyperparams::new(0.5, [4.0, 30.0], 0.1).unwrap();
    let full = GpModel::new(data.clone(), h).unwrap();
    let sparse = fic_precompute(&h, &stride_init(&data, 20).unwrap(), &data).unwrap();
    let queries: Vec<Input> = (0..200).map(|_| [rng.random_range(5.0..25.0), rng.random_range(5.0..25.0)]).collect();
    let timing = pipeline::time_predictions(&full, &sparse, &queries, 0.5);
    let secs = t.elapsed().as_secs_f64();
    let pass = exact_err <= 1e-6 && timing.speedup() >= 5.0 && secs < 120.0;
    verdict(
        3,
        "sparse GP",
        pass,
        &format!(
            "inducing = training max diff {exact_err:.2e} (≤ 1e-6), m = 2000 exact {:.2e} s vs sparse {:.2e} s per prediction, speedup {:.1}x (≥ 5), {secs:.1} s",
            timing.exact,
            timing.sparse,
            timing.speedup()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_modeling_gain() {
    let _g = lock();
    let tr = trained();
    let t = Instant::now();
    let scores = pipeline::score_test_sets(&tr.trained.models, &tr.corpus).unwrap();
    let secs = tr.secs + t.elapsed().as_secs_f64();
    let per_set: Vec<String> = scores
        .iter()
        .map(|s: &SetScore| format!("{} arx {:.3} gp {:.3} ({:.3}) sparse {:.3} ({:.3})", s.name, s.arx, s.full, s.full / s.arx, s.sparse, s.sparse / s.arx))
        .collect();
    let pass = scores.len() == 3 && scores.iter().all(|s| s.full <= 0.85 * s.arx && s.sparse <= 0.95 * s.arx) && secs < 300.0;
    verdict(4, "modeling gain", pass, &format!("{} (limits 0.85 / 0.95), {secs:.1} s incl. training", per_set.join("; ")));
    assert!(pass);
}

/// Replays the braking scenario with GP-MPC, handing each solved step to `f`.
fn walk_gp_loop(cfg: &RunConfig, models: &ModelPair, seed: u64, mut f: impl FnMut(&PlatoonState, &MpcSolution)) {
    let mut ctrl = pipeline::controller(cfg, Mode::Gp, Some(models), models.arx).unwrap();
    let plant = pipeline::plant(cfg, Some(models), models.arx);
    let dt = cfg.mpc.dt;
    let steps = (cfg.scenario.duration / dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = PlatoonState::at_rest(cfg.scenario.n_av, cfg.scenario.spacing);
    for k in 0..steps {
        let v_ref: Vec<f64> = (1..=cfg.mpc.horizon).map(|i| cfg.scenario.v_ref.at((k + i) as f64 * dt)).collect();
        let out = ctrl.mpc_step(&state, &HvBelief::exact(state.p_hv), &v_ref).unwrap();
        f(&state, &out.solution);
        let lead_now = state.lead_velocity();
        let hv = hv_plant_step(&plant, &mut state.hist, state.p_hv, lead_now, dt, &mut rng);
        for n in 0..state.n_av() {
            let (v, p) = av_step(state.v_av[n], state.p_av[n], out.accel[n], dt);
            state.v_av[n] = v;
            state.p_av[n] = p;
        }
        state.p_hv = hv.p_next;
        state.k = k + 1;
    }
}

/// GP inputs along a solved horizon: step i uses (v^H, v^N) one sample
/// earlier, so step 0 reads the measured lags.
fn horizon_inputs(state: &PlatoonState, sol: &MpcSolution, n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|i| if i == 0 { state.hist.gp_input() } else { [sol.v_hv[i - 1], sol.v_lead[i - 1]] }).collect()
}

/// The GP-mode horizon whose HV constraint is closest to binding.
fn tightest_horizon(cfg: &RunConfig, models: &ModelPair) -> (PlatoonState, MpcSolution) {
    let mut best: Option<(f64, PlatoonState, MpcSolution)> = None;
    walk_gp_loop(cfg, models, 0, |state, sol| {
        let last = sol.p_av.len() - 1;
        let margin = (2..=cfg.mpc.horizon).map(|i| sol.p_av[last][i] - sol.mu_hv[i] - sol.hv_bound[i]).fold(f64::INFINITY, f64::min);
        if !sol.slack_used && best.as_ref().is_none_or(|b| margin < b.0) {
            best = Some((margin, state.clone(), sol.clone()));
        }
    });
    let (_, s, sol) = best.expect("at least one solved step");
    (s, sol)
}

#[test]
fn criterion_5_chance_constraint() {
    let _g = lock();
    let tr = trained();
    let t = Instant::now();
    let cfg = MpcConfig::default();
    let q = normal_inv_cdf(0.95).unwrap();
    let tight = tighten_distance(1.0, &cfg).unwrap();

    // Freeze the most demanding solved horizon and draw HV trajectories from
    // the discrepancy distribution frozen into it: step i adds
    // T(v^H_i + μ^d_i) with variance T²Σ^d_i, read back from the belief.
    let models = &tr.trained.models;
    let (state, sol) = tightest_horizon(&tr.cfg, models);
    let n = cfg.horizon;
    let last = sol.p_av.len() - 1;
    let frozen: Vec<(f64, f64)> = (0..n).map(|i| (sol.mu_hv[i + 1] - sol.mu_hv[i], (sol.sigma_hv[i + 1] - sol.sigma_hv[i]).max(0.0).sqrt())).collect();
    // Same horizon with the full GP re-evaluated at the solved inputs; reported only.
    let plant = models.full_model();
    let refreshed: Vec<(f64, f64)> = horizon_inputs(&state, &sol, n)
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let p = plant.disc.predict(x);
            (cfg.dt * (sol.v_hv[i] + p.mean), cfg.dt * p.var.sqrt())
        })
        .collect();
    let draws = 100_000;
    let mc = |steps: &[(f64, f64)], seed: u64| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut violations = vec![0usize; n + 1];
        for _ in 0..draws {
            let mut p = state.p_hv;
            for (i, (d, sd)) in steps.iter().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                p += d + sd * z;
                if sol.p_av[last][i + 1] - p < cfg.delta + cfg.delta_ext {
                    violations[i + 1] += 1;
                }
            }
        }
        violations.iter().map(|v| *v as f64 / draws as f64).collect()
    };
    let freqs = mc(&frozen, 5);
    let freqs_full = mc(&refreshed, 6);
    let limit = 0.05 + 3.0 * (0.05 * 0.95 / draws as f64).sqrt();
    // Step 1 is fixed by the current state; the solver constrains steps 2..=N.
    let mc_ok = freqs[2..].iter().all(|f| *f <= limit);
    let fmt = |f: &[f64]| f[1..].iter().map(|f| format!("{f:.4}")).collect::<Vec<_>>().join(" ");
    let secs = t.elapsed().as_secs_f64();
    let pass = (q - 1.6449).abs() <= 1e-4 && (tight - 21.6449).abs() <= 1e-3 && mc_ok && secs < 60.0;
    verdict(
        5,
        "chance constraint",
        pass,
        &format!(
            "Φ⁻¹(0.95) = {q:.6}, tightened(Σ=1) = {tight:.5}, violation frequency per step [{}] (steps 2..=N ≤ {limit:.4}), t = {:.2} s, {secs:.1} s; full GP at solved inputs (not gated) [{}]",
            fmt(&freqs),
            state.k as f64 * cfg.dt,
            fmt(&freqs_full)
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_closed_loop_safety() {
    let _g = lock();
    let l = loops();
    let gp_min: Vec<f64> = l.gp.iter().map(|g| g.min_hv_gap()).collect();
    let nom_min: Vec<f64> = l.nominal.iter().map(|g| g.min_hv_gap()).collect();
    let (mg, mn) = (median(&gp_min).unwrap(), median(&nom_min).unwrap());
    let worst = gp_min.iter().copied().enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let final_gp = median(&l.gp.iter().map(|g| g.final_state.p_hv).collect::<Vec<_>>()).unwrap();
    let final_nom = median(&l.nominal.iter().map(|g| g.final_state.p_hv).collect::<Vec<_>>()).unwrap();
    let rel: f64 = l
        .gp
        .iter()
        .zip(&l.nominal)
        .map(|(g, n)| ((g.final_state.p_hv - n.final_state.p_hv) / n.final_state.p_hv).abs())
        .fold(0.0, f64::max);
    let all_safe = gp_min.iter().all(|m| *m >= 20.0);
    let pass = all_safe && mg - mn >= 0.5 && rel <= 0.02 && l.secs < 600.0;
    verdict(
        6,
        "closed-loop safety",
        pass,
        &format!(
            "GP-MPC min gap ≥ 20 on all {SEEDS} seeds: {all_safe} (worst {:.3} m, seed {}), median min gap GP {mg:.3} vs nominal {mn:.3} (diff {:.3} ≥ 0.5), HV final position max rel diff {:.4} (≤ 0.02; medians {final_gp:.1} / {final_nom:.1} m), {:.1} s",
            worst.1,
            worst.0,
            mg - mn,
            rel,
            l.secs
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_overhead() {
    let _g = lock();
    let l = loops();
    let mean = |logs: &[TrajectoryLog]| {
        let t: Vec<f64> = logs.iter().flat_map(|g| g.solve_times()).collect();
        t.iter().sum::<f64>() / t.len() as f64
    };
    let (g, n) = (mean(&l.gp), mean(&l.nominal));
    let pass = g <= 1.25 * n && g <= 0.25 && n <= 0.25 && l.secs < 300.0;
    verdict(
        7,
        "overhead",
        pass,
        &format!("mean step GP {g:.3e} s, nominal {n:.3e} s, ratio {:.3} (≤ 1.25), both ≤ 0.25 s, {:.1} s", g / n, l.secs),
    );
    assert!(pass);
}

#[test]
fn criterion_8_propagation() {
    let _g = lock();
    let l = loops();
    let horizons = l.gp.iter().flat_map(|g| g.horizon_sigma.iter());
    let mut count = 0usize;
    let mut monotone = true;
    for s in horizons {
        count += 1;
        monotone &= s.windows(2).all(|w| w[1] >= w[0]);
    }
    // Dyadic variances make every product and sum exact in binary.
    let mut exact = true;
    for (n, sd) in [(1usize, 0.5), (6, 0.25), (10, 1.5), (40, 0.125)] {
        let mut b = HvBelief { mean: 0.0, var: 0.0 };
        for _ in 0..n {
            b = propagate_belief(&b, 10.0, &GpPrediction { mean: 0.1, var: sd }, 0.25);
        }
        exact &= b.var == n as f64 * 0.0625 * sd;
    }
    let pass = monotone && exact && count > 0;
    verdict(8, "propagation invariants", pass, &format!("{count} solved horizons non-decreasing: {monotone}, N·T²·Σ^d exact: {exact}"));
    assert!(pass);
}

#[test]
fn criterion_9_degenerate_gp() {
    let _g = lock();
    let arx = ArxCoefficients::published();
    let cfg = MpcConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n_av = rng.random_range(1..=3);
        let mut p = 0.0;
        let (mut p_av, mut v_av) = (Vec::new(), Vec::new());
        for _ in 0..n_av {
            p_av.push(p);
            v_av.push(rng.random_range(0.0..30.0));
            p -= rng.random_range(22.0..40.0);
        }
        let hv: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..30.0));
        let lead: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..30.0));
        let state = PlatoonState { p_av, v_av, p_hv: p, hist: VelocityHistory::new(hv, lead).unwrap(), k: 0 };
        let v_ref: Vec<f64> = (0..cfg.horizon).map(|_| rng.random_range(0.0..30.0)).collect();
        let belief = HvBelief::exact(state.p_hv);
        let mut nominal = Controller::nominal(cfg, arx).unwrap();
        let mut gp = Controller::gp(cfg, HvModel::new(arx, Discrepancy::Fixed(GpPrediction { mean: 0.0, var: 0.0 }))).unwrap();
        let a = nominal.mpc_step(&state, &belief, &v_ref).unwrap().accel;
        let b = gp.mpc_step(&state, &belief, &v_ref).unwrap().accel;
        worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    let pass = worst <= 1e-6;
    verdict(9, "degenerate GP equivalence", pass, &format!("max first-step difference over 100 states {worst:.2e} (≤ 1e-6)"));
    assert!(pass);
}

// Checks below use the shared models but are not numbered criteria.

#[test]
fn sparse_rmse_close_to_full_and_both_beat_arx() {
    let _g = lock();
    let tr = trained();
    for s in pipeline::score_test_sets(&tr.trained.models, &tr.corpus).unwrap() {
        assert!(s.full < s.arx && s.sparse < s.arx, "{s:?}");
        assert!((s.sparse - s.full).abs() <= 0.2 * s.full, "{s:?}");
    }
}

/// Frozen cache values versus the GP re-evaluated along each converged
/// solution: HV constraint values must agree within 0.1 m per step.
#[test]
fn frozen_cache_is_consistent_with_converged_solution() {
    let _g = lock();
    let tr = trained();
    let models = &tr.trained.models;
    let disc = models.sparse_model().disc;
    let cfg = tr.cfg.mpc_config(Mode::Gp);
    let mut worst = 0.0f64;
    let mut over = Vec::new();
    walk_gp_loop(&tr.cfg, models, 0, |state, sol| {
        let mut b = HvBelief::exact(state.p_hv);
        for (i, x) in horizon_inputs(state, sol, cfg.horizon).iter().enumerate() {
            b = propagate_belief(&b, sol.v_hv[i], &disc.predict(x), cfg.dt);
            let refreshed = b.mean + tighten_distance(b.var, &cfg).unwrap();
            let frozen = sol.mu_hv[i + 1] + sol.hv_bound[i + 1];
            let d = (refreshed - frozen).abs();
            if d >= 0.1 {
                over.push((state.k, i + 1));
            }
            worst = worst.max(d);
        }
    });
    assert!(worst < 0.1, "largest constraint-value difference {worst:.4} m; (step, horizon index) at or over 0.1 m: {over:?}");
}

/// The default `simulate` run (seed 0) in both modes.
#[test]
fn braking_example_gp_keeps_distance_above_nominal() {
    let _g = lock();
    let l = loops();
    let (gp, nom) = (l.gp[0].min_hv_gap(), l.nominal[0].min_hv_gap());
    assert!(gp >= 20.0 && gp > nom, "gp {gp:.3} m, nominal {nom:.3} m");
}

#[test]
fn braking_example_nominal_rides_the_constraint() {
    let _g = lock();
    let nom = loops().nominal[0].min_hv_gap();
    assert!(nom >= 19.5, "nominal min HV-AV {nom:.3} m (limit 19.5)");
}
