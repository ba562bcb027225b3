//! File formats: comma-separated series and logs with `#` provenance
//! headers, a TOML corpus manifest, and JSON model files.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{Corpus, CorpusSet, DriveSeries, SetRole};
use crate::error::{Error, Result};
use crate::gp::{GpDataset, GpHyperparams, GpModel};
use crate::hv::ArxCoefficients;
use crate::linalg::CholFactor;
use crate::sim::{LogRow, TrajectoryLog};
use crate::sparse::{InducingSet, SparseGpModel};

/// Prefixes every line of `text` with `# `.
pub fn comment_block(text: &str) -> String {
    text.lines().map(|l| format!("# {l}\n")).collect()
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes())
}

fn write_with_header(path: &Path, header: &str, body: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(comment_block(header).as_bytes())?;
    f.write_all(body)?;
    Ok(())
}

/// Columns t, v_H, v_AV.
pub fn write_series(path: &Path, s: &DriveSeries, provenance: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "v_H", "v_AV"])?;
    for k in 0..s.len() {
        w.write_record(&[(k as f64 * s.dt).to_string(), s.v_hv[k].to_string(), s.v_lead[k].to_string()])?;
    }
    let body = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    write_with_header(path, provenance, &body)
}

pub fn parse_series(text: &str) -> Result<DriveSeries> {
    let mut r = reader(text);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("series is missing column `{name}`")))
    };
    let (ct, ch, ca) = (col("t")?, col("v_H")?, col("v_AV")?);
    let (mut t, mut vh, mut va) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            rec.get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse(format!("bad number in data row {}", line + 1)))
        };
        t.push(num(ct)?);
        vh.push(num(ch)?);
        va.push(num(ca)?);
    }
    if t.len() < 2 {
        return Err(Error::SeriesTooShort { len: t.len(), min: 2 });
    }
    let dt = t[1] - t[0];
    if !(dt > 0.0) || t.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.max(1.0)) {
        return Err(Error::Parse("series time stamps must be evenly spaced and increasing".into()));
    }
    DriveSeries::new(dt, vh, va)
}

pub fn read_series(path: &Path) -> Result<DriveSeries> {
    parse_series(&fs::read_to_string(path)?)
}

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub role: SetRole,
    pub seed: u64,
    pub samples: usize,
    /// Training rows taken from this set's discrepancy samples.
    pub stride_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dt: f64,
    pub train_fraction: f64,
    pub train_sources: usize,
    pub test_sets: usize,
    pub sets: Vec<ManifestEntry>,
}

/// Writes every set plus the manifest into `dir` (created if missing).
pub fn write_corpus(dir: &Path, corpus: &Corpus, train_fraction: f64, provenance: &str) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    for s in &corpus.sets {
        let header = format!("set {} role {:?} seed {}\n{provenance}", s.name, s.role, s.seed);
        write_series(&dir.join(&s.name), &s.series, &header)?;
    }
    let manifest = Manifest {
        dt: corpus.sets.first().map(|s| s.series.dt).unwrap_or(0.0),
        train_fraction,
        train_sources: corpus.sets.iter().filter(|s| s.role == SetRole::Train).count(),
        test_sets: corpus.sets.iter().filter(|s| s.role == SetRole::Test).count(),
        sets: corpus
            .sets
            .iter()
            .map(|s| ManifestEntry {
                file: s.name.clone(),
                role: s.role,
                seed: s.seed,
                samples: s.series.len(),
                stride_indices: s.stride.clone(),
            })
            .collect(),
    };
    let body = toml::to_string(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    write_with_header(&dir.join(MANIFEST_FILE), provenance, body.as_bytes())?;
    Ok(manifest)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Parse(format!("manifest: {e}")))?;
    let sets = manifest
        .sets
        .into_iter()
        .map(|e| {
            let series = read_series(&dir.join(&e.file))?;
            if series.len() != e.samples {
                return Err(Error::Parse(format!("{} has {} rows, manifest says {}", e.file, series.len(), e.samples)));
            }
            Ok(CorpusSet { name: e.file, role: e.role, seed: e.seed, series, stride: e.stride_indices })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { sets })
}

pub const MODEL_FORMAT: &str = "platoon-gp-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelBody {
    Exact { chol_lower: Vec<f64>, jitter: f64, alpha: Vec<f64> },
    Sparse { inducing: InducingSet, lu: Vec<f64>, lu_jitter: f64, la: Vec<f64>, la_jitter: f64, w: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub provenance: String,
    pub arx: ArxCoefficients,
    pub hyper: GpHyperparams,
    pub data: GpDataset,
    #[serde(flatten)]
    pub body: ModelBody,
}

impl ModelFile {
    pub fn exact(m: &GpModel, arx: &ArxCoefficients, provenance: &str) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            provenance: provenance.into(),
            arx: *arx,
            hyper: *m.hyper(),
            data: m.data().clone(),
            body: ModelBody::Exact {
                chol_lower: m.chol().lower_row_major().to_vec(),
                jitter: m.chol().jitter(),
                alpha: m.alpha().to_vec(),
            },
        }
    }

    /// Sparse models keep the training data for reference even though
    /// prediction never touches it.
    pub fn sparse(m: &SparseGpModel, data: &GpDataset, arx: &ArxCoefficients, provenance: &str) -> Self {
        let (lu, la, w) = m.parts();
        Self {
            format: MODEL_FORMAT.into(),
            provenance: provenance.into(),
            arx: *arx,
            hyper: *m.hyper(),
            data: data.clone(),
            body: ModelBody::Sparse {
                inducing: m.inducing().clone(),
                lu: lu.lower_row_major().to_vec(),
                lu_jitter: lu.jitter(),
                la: la.lower_row_major().to_vec(),
                la_jitter: la.jitter(),
                w: w.to_vec(),
            },
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if f.format != MODEL_FORMAT {
            return Err(Error::Parse(format!("unsupported model format `{}`", f.format)));
        }
        Ok(f)
    }

    pub fn to_exact(&self) -> Result<GpModel> {
        match &self.body {
            ModelBody::Exact { chol_lower, jitter, alpha } => {
                let chol = CholFactor::from_lower(self.data.len(), chol_lower.clone(), *jitter)?;
                GpModel::from_parts(self.data.clone(), self.hyper, chol, alpha.clone())
            }
            ModelBody::Sparse { .. } => Err(Error::Parse("expected an exact model, found sparse".into())),
        }
    }

    pub fn to_sparse(&self) -> Result<SparseGpModel> {
        match &self.body {
            ModelBody::Sparse { inducing, lu, lu_jitter, la, la_jitter, w } => {
                let m = inducing.len();
                let lu = CholFactor::from_lower(m, lu.clone(), *lu_jitter)?;
                let la = CholFactor::from_lower(m, la.clone(), *la_jitter)?;
                SparseGpModel::from_parts(self.hyper, inducing.clone(), lu, la, w.clone())
            }
            ModelBody::Exact { .. } => Err(Error::Parse("expected a sparse model, found exact".into())),
        }
    }
}

/// Metadata line the report reader relies on.
pub const LOG_META_PREFIX: &str = "meta:";

#[derive(Debug, Clone, PartialEq)]
pub struct LogMeta {
    pub mode: String,
    pub delta: f64,
    pub n_av: usize,
    pub dt: f64,
    pub seed: u64,
}

pub fn log_header_columns(n_av: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for n in 1..=n_av {
        cols.push(format!("p_av{n}"));
        cols.push(format!("v_av{n}"));
        cols.push(format!("a_av{n}"));
    }
    for c in ["p_hv", "v_hv", "mu_hv", "sigma2_hv", "dist_av_hv", "bound", "solve_time"] {
        cols.push(c.to_string());
    }
    cols
}

pub fn write_log(path: &Path, log: &TrajectoryLog, meta: &LogMeta, provenance: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(log_header_columns(log.n_av))?;
    for r in &log.rows {
        let mut rec = vec![r.t.to_string()];
        for n in 0..log.n_av {
            rec.push(r.p_av[n].to_string());
            rec.push(r.v_av[n].to_string());
            rec.push(r.a_av[n].to_string());
        }
        for v in [r.p_hv, r.v_hv, r.mu_hv, r.sigma2_hv, r.dist_av_hv, r.bound, r.solve_time] {
            rec.push(v.to_string());
        }
        w.write_record(&rec)?;
    }
    let body = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    let header = format!(
        "{LOG_META_PREFIX} mode={} delta={} n_av={} dt={} seed={}\n{provenance}",
        meta.mode, meta.delta, meta.n_av, meta.dt, meta.seed
    );
    write_with_header(path, &header, &body)
}

/// Log contents as read back for reporting. Slack flags are not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub meta: LogMeta,
    /// Header comment lines without the leading `#`.
    pub comments: Vec<String>,
    pub rows: Vec<LogRow>,
}

fn parse_meta(text: &str) -> Result<LogMeta> {
    let line = text
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .map(str::trim)
        .find_map(|l| l.strip_prefix(LOG_META_PREFIX))
        .ok_or_else(|| Error::MalformedLog("missing meta line".into()))?;
    let get = |key: &str| {
        line.split_whitespace()
            .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| Error::MalformedLog(format!("meta line lacks `{key}`")))
    };
    let num = |key: &str| get(key)?.parse::<f64>().map_err(|_| Error::MalformedLog(format!("bad `{key}` in meta line")));
    Ok(LogMeta {
        mode: get("mode")?.to_string(),
        delta: num("delta")?,
        n_av: get("n_av")?.parse().map_err(|_| Error::MalformedLog("bad n_av".into()))?,
        dt: num("dt")?,
        seed: get("seed")?.parse().map_err(|_| Error::MalformedLog("bad seed".into()))?,
    })
}

pub fn parse_log(text: &str) -> Result<ParsedLog> {
    let meta = parse_meta(text)?;
    let mut r = reader(text);
    let headers: Vec<String> = r.headers().map_err(|e| Error::MalformedLog(e.to_string()))?.iter().map(String::from).collect();
    if headers != log_header_columns(meta.n_av) {
        return Err(Error::MalformedLog(format!("unexpected columns {headers:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::MalformedLog(e.to_string()))?;
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::MalformedLog(format!("non-numeric field in data row {}", i + 1)))?;
        if v.len() != headers.len() {
            return Err(Error::MalformedLog(format!("row {} has {} fields", i + 1, v.len())));
        }
        let n = meta.n_av;
        let tail = &v[1 + 3 * n..];
        rows.push(LogRow {
            t: v[0],
            p_av: (0..n).map(|k| v[1 + 3 * k]).collect(),
            v_av: (0..n).map(|k| v[2 + 3 * k]).collect(),
            a_av: (0..n).map(|k| v[3 + 3 * k]).collect(),
            p_hv: tail[0],
            v_hv: tail[1],
            mu_hv: tail[2],
            sigma2_hv: tail[3],
            dist_av_hv: tail[4],
            bound: tail[5],
            solve_time: tail[6],
            slack_used: false,
        });
    }
    if rows.is_empty() {
        return Err(Error::MalformedLog("log has no data rows".into()));
    }
    let comments = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.strip_prefix("# ").unwrap_or(&l[1..]).to_string())
        .collect();
    Ok(ParsedLog { meta, comments, rows })
}

pub fn read_log(path: &Path) -> Result<ParsedLog> {
    parse_log(&fs::read_to_string(path)?)
}
