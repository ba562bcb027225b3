//! `platoon` command line: corpus generation, GP training, closed-loop
//! simulation, timing benchmarks and plots, all driven by one TOML file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use platoon_core::config::RunConfig;
use platoon_core::datagen::generate_corpus;
use platoon_core::hv::ArxCoefficients;
use platoon_core::io::{self, LogMeta, ModelFile};
use platoon_core::mpc::Mode;
use platoon_core::pipeline::{self, ModelPair};
use platoon_core::report::{self, TimingStats};
use platoon_core::{Error, Result};

pub const FULL_MODEL_FILE: &str = "gp_full.json";
pub const SPARSE_MODEL_FILE: &str = "gp_sparse.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.txt";
pub const BENCH_FILE: &str = "bench.txt";

#[derive(Debug, Parser)]
#[command(name = "platoon", version, about = "GP-based MPC for mixed vehicle platoons")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Overrides the command's output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic driving corpus and its manifest.
    Datagen(Common),
    /// Train the exact and sparse discrepancy models and score them.
    Train(Common),
    /// Run the braking scenario in closed loop and write the trajectory log.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "MODE")]
        mode: Option<Mode>,
    },
    /// Time both controllers on the braking scenario.
    Bench(Common),
    /// Render velocity, position and distance plots from a trajectory log.
    Report {
        /// Trajectory log written by `simulate`.
        log: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

/// What a successful command printed and where it wrote.
#[derive(Debug, Default)]
pub struct Outcome {
    pub message: String,
    pub files: Vec<PathBuf>,
}

pub fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Commented header embedded in every output file.
pub fn provenance(cfg: &RunConfig, command: &str) -> String {
    format!(
        "platoon {} {command}\nseed = {}\n{CONFIG_MARKER}\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.seed,
        cfg.to_toml_string().trim_end()
    )
}

fn write_text(path: &Path, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    files.push(path.to_path_buf());
    Ok(())
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Datagen(c) => cmd_datagen(&c),
        Command::Train(c) => cmd_train(&c),
        Command::Simulate { common, mode } => cmd_simulate(&common, mode),
        Command::Bench(c) => cmd_bench(&c),
        Command::Report { log, common } => cmd_report(&log, &common),
    }
}

/// `--seed` also reseeds corpus generation here.
pub fn cmd_datagen(c: &Common) -> Result<Outcome> {
    let mut cfg = load_config(c)?;
    if let Some(s) = c.seed {
        cfg.datagen.seed = s;
    }
    let dir = c.out.clone().unwrap_or_else(|| cfg.paths.corpus.clone());
    let corpus = generate_corpus(&cfg.datagen)?;
    let manifest = io::write_corpus(&dir, &corpus, cfg.datagen.train_fraction, &provenance(&cfg, "datagen"))?;
    let mut files: Vec<PathBuf> = manifest.sets.iter().map(|e| dir.join(&e.file)).collect();
    files.push(dir.join(io::MANIFEST_FILE));
    Ok(Outcome {
        message: format!(
            "wrote {} sets ({} train, {} test) and manifest to {}",
            manifest.sets.len(),
            manifest.train_sources,
            manifest.test_sets,
            dir.display()
        ),
        files,
    })
}

pub fn cmd_train(c: &Common) -> Result<Outcome> {
    let cfg = load_config(c)?;
    let dir = c.out.clone().unwrap_or_else(|| cfg.paths.models.clone());
    let corpus = io::read_corpus(&cfg.paths.corpus)?;
    let arx = ArxCoefficients::published();
    let trained = pipeline::train_models(&corpus, &cfg, arx)?;
    let scores = pipeline::score_test_sets(&trained.models, &corpus)?;
    let queries: Vec<_> = corpus.test_sets().flat_map(|s| s.series.discrepancy(&arx)).flat_map(|d| d.inputs().to_vec()).take(500).collect();
    let timing = (!queries.is_empty()).then(|| pipeline::time_predictions(&trained.models.full, &trained.models.sparse, &queries, 0.2));
    let prov = provenance(&cfg, "train");
    let mut files = Vec::new();
    let full_path = dir.join(FULL_MODEL_FILE);
    ModelFile::exact(&trained.models.full, &arx, &prov).save(&full_path)?;
    files.push(full_path);
    let sparse_path = dir.join(SPARSE_MODEL_FILE);
    ModelFile::sparse(&trained.models.sparse, &trained.data, &arx, &prov).save(&sparse_path)?;
    files.push(sparse_path);
    let text = pipeline::train_report(&trained, &scores, timing);
    write_text(&dir.join(TRAIN_REPORT_FILE), &format!("{}\n{text}", io::comment_block(&prov)), &mut files)?;
    Ok(Outcome { message: text, files })
}

pub fn load_models(dir: &Path) -> Result<ModelPair> {
    let full = ModelFile::load(&dir.join(FULL_MODEL_FILE))?;
    let sparse = ModelFile::load(&dir.join(SPARSE_MODEL_FILE))?;
    if full.arx != sparse.arx {
        return Err(Error::InvalidConfig("exact and sparse model files disagree on the ARX baseline".into()));
    }
    Ok(ModelPair { arx: full.arx, full: full.to_exact()?, sparse: sparse.to_sparse()? })
}

/// Models are required in gp mode. Nominal runs still use them for the
/// simulated HV when present so both modes face the same plant.
fn models_for(cfg: &RunConfig, mode: Mode) -> Result<(Option<ModelPair>, Option<String>)> {
    let dir = &cfg.paths.models;
    let present = dir.join(FULL_MODEL_FILE).exists() && dir.join(SPARSE_MODEL_FILE).exists();
    match (mode, present) {
        (_, true) => Ok((Some(load_models(dir)?), None)),
        (Mode::Gp, false) => Err(Error::InvalidConfig(format!("gp mode needs trained models in {}; run `platoon train` first", dir.display()))),
        (Mode::Nominal, false) => Ok((None, Some(format!("note: no models in {}, simulating the HV with the ARX model only", dir.display())))),
    }
}

pub fn log_file_name(mode: Mode) -> String {
    format!("trajectory_{mode}.csv")
}

pub fn cmd_simulate(c: &Common, mode: Option<Mode>) -> Result<Outcome> {
    let cfg = load_config(c)?;
    let mode = mode.unwrap_or(cfg.mode);
    let dir = c.out.clone().unwrap_or_else(|| cfg.paths.output.clone());
    let (models, note) = models_for(&cfg, mode)?;
    let log = pipeline::run_closed_loop(&cfg, mode, models.as_ref(), cfg.seed)?;
    let prov = provenance(&cfg, &format!("simulate --mode {mode}"));
    let meta = LogMeta { mode: mode.to_string(), delta: cfg.mpc.delta, n_av: log.n_av, dt: log.dt, seed: cfg.seed };
    let mut files = Vec::new();
    let log_path = dir.join(log_file_name(mode));
    io::write_log(&log_path, &log, &meta, &prov)?;
    files.push(log_path);

    let mut msg = String::new();
    if let Some(n) = note {
        let _ = writeln!(msg, "{n}");
    }
    let _ = writeln!(msg, "{}", report::run_summary(&mode.to_string(), &log.final_state, log.min_hv_gap()));
    let _ = writeln!(msg, "steps {}  slack steps {}", log.rows.len(), log.slack_steps());
    if let Some(t) = TimingStats::from_samples(&log.solve_times()) {
        let _ = writeln!(msg, "solve time mean {:.3e} s, max {:.3e} s", t.mean, t.max);
    }
    write_text(&dir.join(format!("summary_{mode}.txt")), &format!("{}\n{msg}", io::comment_block(&prov)), &mut files)?;
    Ok(Outcome { message: msg, files })
}

pub fn cmd_bench(c: &Common) -> Result<Outcome> {
    let cfg = load_config(c)?;
    let dir = c.out.clone().unwrap_or_else(|| cfg.paths.output.clone());
    let (models, note) = models_for(&cfg, Mode::Gp)?;
    let mut rows = Vec::new();
    for mode in [Mode::Nominal, Mode::Gp] {
        let mut samples = Vec::new();
        for r in 0..cfg.bench.runs as u64 {
            let log = pipeline::run_closed_loop(&cfg, mode, models.as_ref(), cfg.seed + r)?;
            samples.extend(log.solve_times());
        }
        if let Some(t) = TimingStats::from_samples(&samples) {
            rows.push((mode, t));
        }
    }
    let mut msg = String::new();
    if let Some(n) = note {
        let _ = writeln!(msg, "{n}");
    }
    let _ = writeln!(msg, "per-step time of mpc_step (GP cache build + QP solve), {} runs per mode, sequential", cfg.bench.runs);
    let labelled: Vec<(String, TimingStats)> = rows.iter().map(|(m, t)| (m.to_string(), *t)).collect();
    let refs: Vec<(&str, TimingStats)> = labelled.iter().map(|(l, t)| (l.as_str(), *t)).collect();
    msg.push_str(&report::timing_table(&refs));
    if let [(_, n), (_, g)] = rows.as_slice() {
        let budget = cfg.mpc.dt;
        let _ = writeln!(msg, "gp / nominal mean ratio: {:.3}", g.mean / n.mean);
        let _ = writeln!(msg, "real-time at {:.0} Hz: {}", 1.0 / budget, if n.mean <= budget && g.mean <= budget { "yes" } else { "no" });
    }
    let mut files = Vec::new();
    let prov = provenance(&cfg, "bench");
    write_text(&dir.join(BENCH_FILE), &format!("{}\n{msg}", io::comment_block(&prov)), &mut files)?;
    Ok(Outcome { message: msg, files })
}

const CONFIG_MARKER: &str = "resolved config:";

/// Recovers the config echoed into an output file's header comments.
pub fn embedded_config(comments: &[String]) -> Option<RunConfig> {
    let start = comments.iter().position(|l| l == CONFIG_MARKER)? + 1;
    RunConfig::from_toml_str(&comments[start..].join("\n")).ok()
}

/// Plots are rendered in memory first so a bad log leaves no files behind.
/// Without `--config` the reference trace comes from the config echoed
/// in the log header.
pub fn cmd_report(log_path: &Path, c: &Common) -> Result<Outcome> {
    let parsed = io::read_log(log_path)?;
    let cfg = match &c.config {
        Some(_) => Some(load_config(c)?),
        None => embedded_config(&parsed.comments),
    };
    let dir = match (&c.out, log_path.parent()) {
        (Some(d), _) => d.clone(),
        (None, Some(p)) => p.to_path_buf(),
        (None, None) => PathBuf::from("."),
    };
    let v_ref = cfg.as_ref().map(|c| c.scenario.v_ref.clone());
    let f = v_ref.as_ref().map(|s| move |t: f64| s.at(t));
    let show_bound = parsed.meta.mode == Mode::Gp.to_string();
    let plots = report::trajectory_plots(&parsed.rows, parsed.meta.delta, f.as_ref().map(|g| g as &dyn Fn(f64) -> f64), show_bound)?;
    let header = format!("platoon {} report\nsource log {}\n{}", env!("CARGO_PKG_VERSION"), log_path.display(), parsed.comments.join("\n"));
    let rendered = plots
        .iter()
        .map(|p| p.to_svg().map(|svg| svg.replacen('\n', &format!("\n<!--\n{}\n-->\n", header.trim_end().replace("--", "- -")), 1)))
        .collect::<Result<Vec<_>>>()?;
    let mut files = Vec::new();
    for (name, svg) in report::PLOT_FILES.iter().zip(&rendered) {
        write_text(&dir.join(name), svg, &mut files)?;
    }
    Ok(Outcome { message: format!("wrote {} plots to {}", files.len(), dir.display()), files })
}

/// Exit status contract: 0 success, 1 usage, config or I/O error,
/// 2 numeric failure.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        2
    } else {
        1
    }
}
