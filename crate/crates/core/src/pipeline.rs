//! End-to-end steps shared by the command line and the acceptance suite:
//! train both discrepancy models, score them, and run closed loops.

use std::fmt::Write as _;
use std::time::Instant;

use crate::config::{PlantGp, RunConfig};
use crate::datagen::Corpus;
use crate::error::{Error, Result};
use crate::gp::{fit_with_report, FitReport, GpDataset, GpHyperparams, GpModel, Input};
use crate::hv::{one_step_eval, ArxCoefficients, Discrepancy, HvModel};
use crate::mpc::{Controller, Mode};
use crate::sim::{run_scenario, TrajectoryLog};
use crate::sparse::{sparsify, SparseGpModel};

/// The exact and sparse discrepancy models over one ARX baseline.
#[derive(Debug, Clone)]
pub struct ModelPair {
    pub arx: ArxCoefficients,
    pub full: GpModel,
    pub sparse: SparseGpModel,
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub models: ModelPair,
    pub data: GpDataset,
    pub fit: FitReport,
}

impl ModelPair {
    pub fn full_model(&self) -> HvModel {
        HvModel::new(self.arx, Discrepancy::Exact(self.full.clone()))
    }

    pub fn sparse_model(&self) -> HvModel {
        HvModel::new(self.arx, Discrepancy::Sparse(self.sparse.clone()))
    }
}

/// Fits the exact GP on the corpus training subset, then derives the
/// sparse model from it.
pub fn train_models(corpus: &Corpus, cfg: &RunConfig, arx: ArxCoefficients) -> Result<TrainedModels> {
    let data = corpus.training_dataset(&arx)?;
    let init = GpHyperparams::heuristic(&data, &cfg.gp.bounds());
    let (full, fit) = fit_with_report(&data, &init, &cfg.gp.train_options(cfg.seed))?;
    let sparse = sparsify(&full, cfg.gp.m_tilde.min(data.len()), &cfg.gp.sparse_options())?;
    Ok(TrainedModels { models: ModelPair { arx, full, sparse }, data, fit })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetScore {
    pub name: String,
    pub arx: f64,
    pub full: f64,
    pub sparse: f64,
}

/// One-step RMSE of the three predictors on every test set.
pub fn score_test_sets(models: &ModelPair, corpus: &Corpus) -> Result<Vec<SetScore>> {
    let (full, sparse) = (models.full_model(), models.sparse_model());
    corpus
        .test_sets()
        .map(|s| {
            let e = one_step_eval(&full, &s.series.v_hv, &s.series.v_lead)?;
            let es = one_step_eval(&sparse, &s.series.v_hv, &s.series.v_lead)?;
            Ok(SetScore { name: s.name.clone(), arx: e.rmse_arx(), full: e.rmse_combined(), sparse: es.rmse_combined() })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictTiming {
    pub exact: f64,
    pub sparse: f64,
}

impl PredictTiming {
    pub fn speedup(&self) -> f64 {
        self.exact / self.sparse
    }
}

/// Mean seconds per single-point prediction over `queries`, repeated
/// until each model has run for at least `min_secs`.
pub fn time_predictions(full: &GpModel, sparse: &SparseGpModel, queries: &[Input], min_secs: f64) -> PredictTiming {
    fn per_call(queries: &[Input], min_secs: f64, mut f: impl FnMut(&Input) -> f64) -> f64 {
        let mut sink = 0.0;
        let mut calls = 0usize;
        let t = Instant::now();
        loop {
            for q in queries {
                sink += f(q);
            }
            calls += queries.len();
            if t.elapsed().as_secs_f64() >= min_secs {
                break;
            }
        }
        std::hint::black_box(sink);
        t.elapsed().as_secs_f64() / calls.max(1) as f64
    }
    PredictTiming {
        exact: per_call(queries, min_secs, |q| {
            let p = full.predict(q);
            p.mean + p.var
        }),
        sparse: per_call(queries, min_secs, |q| {
            let p = sparse.predict(q);
            p.mean + p.var
        }),
    }
}

pub fn train_report(trained: &TrainedModels, scores: &[SetScore], timing: Option<PredictTiming>) -> String {
    let models = &trained.models;
    let h = models.full.hyper();
    let mut s = String::new();
    let _ = writeln!(s, "training samples: {}", trained.data.len());
    let _ = writeln!(
        s,
        "hyperparameters: signal var {:.5}, lengthscale^2 [{:.5}, {:.5}], noise var {:.5}",
        h.signal_var(),
        h.lengthscale_sq()[0],
        h.lengthscale_sq()[1],
        h.noise_var()
    );
    let _ = writeln!(s, "log marginal likelihood: {:.4} (restart {} of {})", trained.fit.lml, trained.fit.best + 1, trained.fit.restarts.len());
    for (i, r) in trained.fit.restarts.iter().enumerate() {
        match (&r.lml, &r.error) {
            (Some(l), _) => {
                let _ = writeln!(s, "  restart {i}: lml {l:.4}, {} iterations, converged {}", r.iters, r.converged);
            }
            (None, Some(e)) => {
                let _ = writeln!(s, "  restart {i}: failed ({e})");
            }
            (None, None) => {}
        }
    }
    let _ = writeln!(s, "inducing points: {}", models.sparse.inducing().len());
    let _ = writeln!(s, "\none-step RMSE (m/s)\nset           ARX       ARX+GP    sparse ARX+GP");
    for sc in scores {
        let _ = writeln!(s, "{:<12}  {:<8.4}  {:<8.4}  {:.4}", sc.name, sc.arx, sc.full, sc.sparse);
    }
    if !scores.is_empty() {
        let n = scores.len() as f64;
        let mean = |f: &dyn Fn(&SetScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
        let (a, f, sp) = (mean(&|x| x.arx), mean(&|x| x.full), mean(&|x| x.sparse));
        let _ = writeln!(s, "{:<12}  {a:<8.4}  {f:<8.4}  {sp:.4}", "mean");
        let ordered = f < sp && sp < a;
        let _ = writeln!(
            s,
            "ordering ARX+GP < sparse < ARX: {}",
            if ordered { "yes".to_string() } else { format!("DEVIATION (full {f:.4}, sparse {sp:.4}, arx {a:.4})") }
        );
    }
    if let Some(t) = timing {
        let _ = writeln!(
            s,
            "\nper-prediction time: exact {:.3e} s, sparse {:.3e} s, speedup {:.1}x",
            t.exact,
            t.sparse,
            t.speedup()
        );
    }
    s
}

/// Controller for `mode`; gp mode predicts with the sparse model online.
pub fn controller(cfg: &RunConfig, mode: Mode, models: Option<&ModelPair>, arx: ArxCoefficients) -> Result<Controller> {
    let mpc = cfg.mpc_config(mode);
    match mode {
        Mode::Nominal => Controller::nominal(mpc, arx),
        Mode::Gp => {
            let m = models.ok_or_else(|| Error::InvalidConfig("gp mode needs trained models".into()))?;
            Controller::gp(mpc, m.sparse_model())
        }
    }
}

/// Simulated HV: ARX plus sampled discrepancy, or plain ARX without models.
pub fn plant(cfg: &RunConfig, models: Option<&ModelPair>, arx: ArxCoefficients) -> HvModel {
    match (models, cfg.plant) {
        (Some(m), PlantGp::Full) => m.full_model(),
        (Some(m), PlantGp::Sparse) => m.sparse_model(),
        (None, _) => HvModel::new(arx, Discrepancy::zero()),
    }
}

pub fn run_closed_loop(cfg: &RunConfig, mode: Mode, models: Option<&ModelPair>, seed: u64) -> Result<TrajectoryLog> {
    let arx = models.map(|m| m.arx).unwrap_or_default();
    let mut ctrl = controller(cfg, mode, models, arx)?;
    run_scenario(&cfg.scenario, &mut ctrl, &plant(cfg, models, arx), seed)
}
