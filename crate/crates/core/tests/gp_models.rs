use nalgebra::{DMatrix, DVector};
use platoon_core::gp::{
    fit, fit_with_report, log_marginal_likelihood, se_kernel, GpDataset, GpHyperparams, GpModel, HyperBounds, Input, TrainOptions,
};
use platoon_core::hv::{one_step_eval, ArxCoefficients, Discrepancy, HvModel};
use platoon_core::linalg::{chol_solve, cholesky, normal_cdf, normal_inv_cdf, SymMatrix, DEFAULT_JITTER};
use platoon_core::sparse::{
    fic_log_marginal_likelihood, fic_precompute, optimize_inducing, select_inducing, sparsify, stride_init, InducingSet, SparseOptions,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn spd(n: usize, rng: &mut ChaCha8Rng, cond: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| cond.powf(i as f64 / (n - 1).max(1) as f64)));
    let m = &q * d * q.transpose();
    0.5 * (&m + m.transpose())
}

#[test]
fn random_spd_solve_matches_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = spd(5, &mut rng, 50.0);
    let f = cholesky(&SymMatrix::from_dmatrix(&m).unwrap(), &DEFAULT_JITTER).unwrap();
    let b = DVector::from_fn(5, |i, _| i as f64 - 2.0);
    let x = chol_solve(&f, &b).unwrap();
    let oracle = m.lu().try_inverse().unwrap() * b;
    assert!((x - oracle).amax() < 1e-8);
}

#[test]
fn quantile_at_975() {
    assert!((normal_inv_cdf(0.975).unwrap() - 1.96).abs() < 1e-4);
    assert_eq!(normal_inv_cdf(0.5).unwrap(), 0.0);
    assert!(normal_inv_cdf(0.0).is_err() && normal_inv_cdf(1.0).is_err());
}

proptest! {
    #[test]
    fn cholesky_solve_up_to_cond_1e10(seed in any::<u64>(), n in 2usize..8, log_cond in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = spd(n, &mut rng, 10f64.powf(log_cond));
        let f = cholesky(&SymMatrix::from_dmatrix(&m).unwrap(), &DEFAULT_JITTER).unwrap();
        let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let x = chol_solve(&f, &b).unwrap();
        let oracle = m.clone().lu().try_inverse().unwrap() * &b;
        prop_assert!((&x - &oracle).norm() <= 1e-7 * oracle.norm(), "cond 1e{log_cond:.2}: rel diff {:.2e}", (&x - &oracle).norm() / oracle.norm());
    }

    #[test]
    fn quantile_inverts_cdf(z in -6.0f64..6.0) {
        prop_assert!((normal_inv_cdf(normal_cdf(z)).unwrap() - z).abs() < 1e-6);
    }

    #[test]
    fn quantile_antisymmetric(p in 1e-12f64..0.5) {
        let (a, b) = (normal_inv_cdf(p).unwrap(), normal_inv_cdf(1.0 - p).unwrap());
        // 1 − p rounds, so compare against the quantile of the rounded value.
        let q = 1.0 - p;
        let back = normal_inv_cdf(1.0 - q).unwrap();
        prop_assert!((b + back).abs() < 1e-12 * b.abs().max(1.0));
        prop_assert!(a < 0.0 || p == 0.5);
    }
}

fn dataset(inputs: Vec<Input>, f: impl Fn(&Input) -> f64) -> GpDataset {
    let targets = inputs.iter().map(f).collect();
    GpDataset::new(inputs, targets).unwrap()
}

fn random_inputs(rng: &mut ChaCha8Rng, m: usize, lo: f64, hi: f64) -> Vec<Input> {
    (0..m).map(|_| [rng.random_range(lo..hi), rng.random_range(lo..hi)]).collect()
}

#[test]
fn zero_targets_drop_data_fit_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = random_inputs(&mut rng, 8, 0.0, 10.0);
    let data = dataset(inputs.clone(), |_| 0.0);
    let h = GpHyperparams::new(1.3, [4.0, 9.0], 0.2).unwrap();
    let (v, _) = log_marginal_likelihood(&h, &data).unwrap();
    let k = DMatrix::from_fn(8, 8, |i, j| se_kernel(&inputs[i], &inputs[j], &h) + if i == j { 0.2 } else { 0.0 });
    let oracle = -0.5 * k.determinant().ln() - 4.0 * (2.0 * std::f64::consts::PI).ln();
    assert!((v - oracle).abs() < 1e-9);
}

#[test]
fn fit_recovers_generating_hyperparameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let truth = GpHyperparams::new(1.0, [4.0, 4.0], 0.01).unwrap();
    let inputs = random_inputs(&mut rng, 200, 0.0, 20.0);
    let k = DMatrix::from_fn(200, 200, |i, j| se_kernel(&inputs[i], &inputs[j], &truth) + if i == j { 0.01 } else { 0.0 });
    let l = k.cholesky().unwrap().l();
    let z = DVector::from_fn(200, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = l * z;
    let data = GpDataset::new(inputs, y.as_slice().to_vec()).unwrap();
    let init = GpHyperparams::heuristic(&data, &HyperBounds::default());
    let m = fit(&data, &init, &TrainOptions::default()).unwrap();
    let (got, want) = (m.hyper().to_log_vec(), truth.to_log_vec());
    for d in 0..4 {
        assert!((got[d] - want[d]).abs() <= 0.5, "log hyperparameter {d}: {} vs {}", got[d], want[d]);
    }
}

#[test]
fn no_signal_shrinks_signal_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = random_inputs(&mut rng, 40, 0.0, 30.0);
    let data = dataset(inputs, |_| 0.0);
    let init = GpHyperparams::new(1.0, [10.0, 10.0], 0.1).unwrap();
    let bounds = HyperBounds::default();
    let m = fit(&data, &init, &TrainOptions { restarts: 2, max_iters: 200, ..Default::default() }).unwrap();
    assert!(m.hyper().signal_var() < 1e3 * bounds.variance.0, "signal variance {}", m.hyper().signal_var());
}

#[test]
fn more_restarts_never_lower_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = random_inputs(&mut rng, 60, 0.0, 30.0);
    let data = dataset(inputs, |x| (x[0] / 4.0).sin() + 0.05 * x[1]);
    let init = GpHyperparams::heuristic(&data, &HyperBounds::default());
    let (_, one) = fit_with_report(&data, &init, &TrainOptions { restarts: 1, ..Default::default() }).unwrap();
    let (_, five) = fit_with_report(&data, &init, &TrainOptions { restarts: 5, ..Default::default() }).unwrap();
    assert!(five.lml >= one.lml);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extra_point_never_raises_variance(seed in any::<u64>(), m in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = random_inputs(&mut rng, m + 1, 0.0, 35.0);
        let h = GpHyperparams::new(rng.random_range(0.1..4.0), [rng.random_range(1.0..200.0), rng.random_range(1.0..200.0)], rng.random_range(1e-3..1.0)).unwrap();
        let full = dataset(inputs.clone(), |x| x[0].sin());
        let fewer = dataset(inputs[..m].to_vec(), |x| x[0].sin());
        let (a, b) = (GpModel::new(fewer, h).unwrap(), GpModel::new(full, h).unwrap());
        for _ in 0..10 {
            let x = [rng.random_range(0.0..35.0), rng.random_range(0.0..35.0)];
            prop_assert!(b.predict(&x).var <= a.predict(&x).var + 1e-8);
        }
    }

    #[test]
    fn variance_within_prior(seed in any::<u64>(), m in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = dataset(random_inputs(&mut rng, m, 0.0, 35.0), |x| x[1].cos());
        let h = GpHyperparams::new(rng.random_range(0.1..4.0), [rng.random_range(0.5..100.0), rng.random_range(0.5..100.0)], rng.random_range(1e-6..1.0)).unwrap();
        let model = GpModel::new(data, h).unwrap();
        for _ in 0..20 {
            let p = model.predict(&[rng.random_range(-5.0..40.0), rng.random_range(-5.0..40.0)]);
            prop_assert!(p.var >= 0.0 && p.var <= h.signal_var());
        }
    }
}

/// FIC through a literal dense covariance Q_ff + diag(K_ff − Q_ff) + σ²I.
fn dense_fic(h: &GpHyperparams, z: &[Input], data: &GpDataset, x: &Input) -> (f64, f64) {
    let xs = data.inputs();
    let (m, n) = (z.len(), xs.len());
    let kuu = DMatrix::from_fn(m, m, |i, j| se_kernel(&z[i], &z[j], h));
    let kuf = DMatrix::from_fn(m, n, |i, j| se_kernel(&z[i], &xs[j], h));
    let kuu_inv = kuu.lu().try_inverse().unwrap();
    let qff = kuf.transpose() * &kuu_inv * &kuf;
    let mut cov = qff.clone();
    for i in 0..n {
        cov[(i, i)] = h.signal_var() + h.noise_var();
    }
    let ku = DVector::from_fn(m, |i, _| se_kernel(&z[i], x, h));
    let q_sf = kuf.transpose() * &kuu_inv * ku;
    let cinv = cov.lu().try_inverse().unwrap();
    let y = DVector::from_column_slice(data.targets());
    ((q_sf.transpose() * &cinv * y)[0], h.signal_var() - (q_sf.transpose() * cinv * &q_sf)[0])
}

#[test]
fn fic_matches_dense_construction() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10 {
        let data = dataset(random_inputs(&mut rng, 15, 0.0, 30.0), |x| (x[0] / 6.0).sin() - 0.02 * x[1]);
        let z = random_inputs(&mut rng, 5, 0.0, 30.0);
        let h = GpHyperparams::new(1.2, [20.0, 60.0], 0.3).unwrap();
        let model = fic_precompute(&h, &InducingSet::new(z.clone()).unwrap(), &data).unwrap();
        for _ in 0..10 {
            let x = [rng.random_range(0.0..30.0), rng.random_range(0.0..30.0)];
            let p = model.predict(&x);
            let (mu, var) = dense_fic(&h, &z, &data, &x);
            assert!((p.mean - mu).abs() < 1e-8 && (p.var - var).abs() < 1e-8, "{p:?} vs ({mu}, {var})");
        }
    }
}

#[test]
fn fic_with_all_inputs_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = dataset(random_inputs(&mut rng, 30, 0.0, 35.0), |x| (x[0] / 5.0).sin());
    let h = GpHyperparams::new(0.8, [9.0, 50.0], 0.05).unwrap();
    let full = GpModel::new(data.clone(), h).unwrap();
    let sparse = fic_precompute(&h, &InducingSet::new(data.inputs().to_vec()).unwrap(), &data).unwrap();
    for _ in 0..100 {
        let x = [rng.random_range(0.0..35.0), rng.random_range(0.0..35.0)];
        let (a, b) = (full.predict(&x), sparse.predict(&x));
        assert!((a.mean - b.mean).abs() < 1e-6 && (a.var - b.var).abs() < 1e-6);
    }
}

#[test]
fn inducing_optimization_does_not_lower_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data = dataset(random_inputs(&mut rng, 25, 0.0, 35.0), |x| (x[0] / 5.0).sin() + 0.1 * rng_free(x));
    let h = GpHyperparams::new(0.8, [9.0, 50.0], 0.05).unwrap();
    let init = InducingSet::new(data.inputs().to_vec()).unwrap();
    let before = fic_log_marginal_likelihood(&h, &init, &data).unwrap().0;
    let z = optimize_inducing(&h, &data, init, &SparseOptions { max_iters: 20, ..Default::default() }).unwrap();
    assert!(fic_log_marginal_likelihood(&h, &z, &data).unwrap().0 >= before);
}

fn rng_free(x: &Input) -> f64 {
    (x[0] * 12.9898 + x[1] * 78.233).sin()
}

#[test]
fn inducing_points_find_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let centers = [10.0, 15.0, 20.0];
    let mut inputs = Vec::new();
    for _ in 0..40 {
        for c in centers {
            inputs.push([c + 0.3 * rng.sample::<f64, _>(StandardNormal), c + 0.3 * rng.sample::<f64, _>(StandardNormal)]);
        }
    }
    let data = dataset(inputs, |x| 0.1 * x[0] + 0.3 * (x[0] / 5.0).sin());
    let h = GpHyperparams::new(1.0, [4.0, 4.0], 0.05).unwrap();
    let full = GpModel::new(data, h).unwrap();
    let z = select_inducing(&full, 3, &SparseOptions::default()).unwrap();
    for c in centers {
        let d = z.points().iter().map(|p| ((p[0] - c).powi(2) + (p[1] - c).powi(2)).sqrt()).fold(f64::INFINITY, f64::min);
        assert!(d < 1.0, "no inducing point near ({c}, {c}): {:?}", z.points());
    }
}

#[test]
fn coinciding_inducing_point_tracks_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let data = dataset(random_inputs(&mut rng, 60, 0.0, 35.0), |x| (x[0] / 5.0).sin());
    let h = GpHyperparams::new(1.0, [9.0, 100.0], 1e-4).unwrap();
    let z = stride_init(&data, 10).unwrap();
    let sparse = fic_precompute(&h, &z, &data).unwrap();
    for p in z.points() {
        let i = data.inputs().iter().position(|x| x == p).unwrap();
        let pred = sparse.predict(p);
        assert!((pred.mean - data.targets()[i]).abs() <= 3.0 * (pred.var + h.noise_var()).sqrt() + 1e-9);
    }
}

#[test]
fn batch_matches_single_calls_and_grid_is_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let data = dataset(random_inputs(&mut rng, 80, 0.0, 35.0), |x| (x[0] / 5.0).sin());
    let h = GpHyperparams::new(1.0, [9.0, 100.0], 0.1).unwrap();
    let sparse = fic_precompute(&h, &stride_init(&data, 20).unwrap(), &data).unwrap();
    let grid: Vec<Input> = (0..50).flat_map(|i| (0..50).map(move |j| [35.0 * i as f64 / 49.0, 35.0 * j as f64 / 49.0])).collect();
    let batch = sparse.predict_batch(&grid);
    for (x, b) in grid.iter().zip(&batch) {
        assert_eq!(*b, sparse.predict(x));
        assert!(b.var >= 0.0);
    }
}

#[test]
fn sparse_cost_independent_of_training_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let h = GpHyperparams::new(1.0, [9.0, 100.0], 0.1).unwrap();
    let queries = random_inputs(&mut rng, 200, 0.0, 35.0);
    let models: Vec<_> = [500, 1000]
        .iter()
        .map(|&m| {
            let data = dataset(random_inputs(&mut rng, m, 0.0, 35.0), |x| (x[0] / 5.0).sin());
            (GpModel::new(data.clone(), h).unwrap(), fic_precompute(&h, &stride_init(&data, 20).unwrap(), &data).unwrap())
        })
        .collect();
    // Interleaved rounds, best of each, so warm-up and scheduler noise hit
    // both sizes alike.
    let mut best = [f64::INFINITY; 2];
    for _ in 0..5 {
        for (k, (full, sparse)) in models.iter().enumerate() {
            best[k] = best[k].min(platoon_core::pipeline::time_predictions(full, sparse, &queries, 0.2).sparse);
        }
    }
    assert!((best[1] / best[0] - 1.0).abs() < 0.2, "per-prediction time {:.3e} s at m=500 vs {:.3e} s at m=1000", best[0], best[1]);
}

#[test]
fn full_inducing_set_reproduces_exact_rmse() {
    let arx = ArxCoefficients::published();
    let mut cfg = platoon_core::datagen::CorpusConfig::default();
    cfg.profile.duration = 60.0;
    cfg.train_sources = 1;
    cfg.test_sets = 1;
    let corpus = platoon_core::datagen::generate_corpus(&cfg).unwrap();
    let data = corpus.training_dataset(&arx).unwrap();
    let h = GpHyperparams::heuristic(&data, &HyperBounds::default());
    let full = GpModel::new(data.clone(), h).unwrap();
    let sparse = sparsify(&full, data.len(), &SparseOptions { max_iters: 0, ..Default::default() }).unwrap();
    let test = corpus.test_sets().next().unwrap();
    let a = one_step_eval(&HvModel::new(arx, Discrepancy::Exact(full)), &test.series.v_hv, &test.series.v_lead).unwrap();
    let b = one_step_eval(&HvModel::new(arx, Discrepancy::Sparse(sparse)), &test.series.v_hv, &test.series.v_lead).unwrap();
    assert!((a.rmse_combined() - b.rmse_combined()).abs() < 1e-6);
}
