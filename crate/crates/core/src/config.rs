//! One TOML file drives a whole experiment; the defaults reproduce the
//! braking study.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::CorpusConfig;
use crate::error::{Error, Result};
use crate::gp::{HyperBounds, TrainOptions};
use crate::mpc::{MpcConfig, Mode};
use crate::sim::ScenarioConfig;
use crate::sparse::SparseOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub models: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { corpus: "out/corpus".into(), models: "out/models".into(), output: "out/run".into() }
    }
}

impl Paths {
    /// Resolves relative entries against `base`.
    pub fn resolve(&self, base: &Path) -> Self {
        let r = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        Self { corpus: r(&self.corpus), models: r(&self.models), output: r(&self.output) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InducingInit {
    Stride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub m_tilde: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub ftol: f64,
    pub variance_bounds: [f64; 2],
    pub lengthscale_sq_bounds: [f64; 2],
    pub inducing_init: InducingInit,
    pub inducing_max_iters: usize,
    pub inducing_tol: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        let s = SparseOptions::default();
        Self {
            m_tilde: 20,
            restarts: t.restarts,
            max_iters: t.max_iters,
            tol: t.tol,
            ftol: t.ftol,
            variance_bounds: [t.bounds.variance.0, t.bounds.variance.1],
            lengthscale_sq_bounds: [t.bounds.lengthscale_sq.0, t.bounds.lengthscale_sq.1],
            inducing_init: InducingInit::Stride,
            inducing_max_iters: s.max_iters,
            inducing_tol: s.tol,
        }
    }
}

impl GpConfig {
    pub fn train_options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            restarts: self.restarts,
            max_iters: self.max_iters,
            tol: self.tol,
            ftol: self.ftol,
            seed,
            bounds: self.bounds(),
        }
    }

    pub fn bounds(&self) -> HyperBounds {
        HyperBounds {
            variance: (self.variance_bounds[0], self.variance_bounds[1]),
            lengthscale_sq: (self.lengthscale_sq_bounds[0], self.lengthscale_sq_bounds[1]),
        }
    }

    pub fn sparse_options(&self) -> SparseOptions {
        SparseOptions { max_iters: self.inducing_max_iters, tol: self.inducing_tol, ..SparseOptions::default() }
    }

    fn validate(&self) -> Result<()> {
        let ok_pair = |b: [f64; 2]| b[0] > 0.0 && b[1] > b[0] && b[1].is_finite();
        if self.m_tilde == 0 || self.restarts == 0 {
            return Err(Error::InvalidConfig("gp.m_tilde and gp.restarts must be at least 1".into()));
        }
        if !ok_pair(self.variance_bounds) || !ok_pair(self.lengthscale_sq_bounds) {
            return Err(Error::InvalidConfig("gp bounds must be positive with lower < upper".into()));
        }
        if !(self.tol > 0.0 && self.ftol >= 0.0 && self.inducing_tol > 0.0) {
            return Err(Error::InvalidConfig("gp tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Which discrepancy model drives the simulated HV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantGp {
    Full,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Closed-loop runs per mode; timings are pooled.
    pub runs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { runs: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds GP restarts and the simulated HV noise.
    pub seed: u64,
    pub mode: Mode,
    pub plant: PlantGp,
    pub paths: Paths,
    pub datagen: CorpusConfig,
    pub gp: GpConfig,
    pub scenario: ScenarioConfig,
    pub mpc: MpcConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::Gp,
            plant: PlantGp::Full,
            paths: Paths::default(),
            datagen: CorpusConfig::default(),
            gp: GpConfig::default(),
            scenario: ScenarioConfig::default(),
            mpc: MpcConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths = cfg.paths.resolve(base);
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.mpc.validate()?;
        self.scenario.validate()?;
        self.datagen.driver.validate()?;
        self.datagen.profile.validate()?;
        self.gp.validate()?;
        if self.datagen.dt != self.mpc.dt {
            return Err(Error::InvalidConfig(format!(
                "datagen.dt ({}) and mpc.dt ({}) must match: the ARX model is discrete at one rate",
                self.datagen.dt, self.mpc.dt
            )));
        }
        if self.bench.runs == 0 {
            return Err(Error::InvalidConfig("bench.runs must be at least 1".into()));
        }
        Ok(())
    }

    /// MPC settings with the run's mode applied.
    pub fn mpc_config(&self, mode: Mode) -> MpcConfig {
        MpcConfig { mode, ..self.mpc }
    }
}
