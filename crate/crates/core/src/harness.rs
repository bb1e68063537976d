//! Per-subject k-fold experiments over the model families, aggregated into
//! a mean/std accuracy table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{accuracy, ForestParams, SvmParams};
use crate::dataio::{plan_folds, read_dataset, BimodalSubject};
use crate::error::{Error, Result};
use crate::fusion::{
    augment_pairs, early_fuse_train, fusion_predict, late_fuse_train, FusionConfig, Modality, ModelSpec,
    PairedExemplarSet, PipelineConfig, UnimodalPipeline,
};
use crate::rng::{derive, tag};
use crate::synthgen::{generate_subject, preset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    EegRf,
    FmriSvm,
    Early,
    EarlyAug,
    Late,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::EegRf,
        ModelKind::FmriSvm,
        ModelKind::Early,
        ModelKind::EarlyAug,
        ModelKind::Late,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::EegRf => "eeg_rf",
            ModelKind::FmriSvm => "fmri_svm",
            ModelKind::Early => "early",
            ModelKind::EarlyAug => "early_aug",
            ModelKind::Late => "late",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model '{s}'")))
    }
}

/// Where a subject comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SubjectSource {
    Container(PathBuf),
    Preset { name: String, seed: u64 },
}

impl SubjectSource {
    pub fn load(&self) -> Result<BimodalSubject> {
        match self {
            SubjectSource::Container(p) => read_dataset(p),
            SubjectSource::Preset { name, seed } => {
                let mut s = generate_subject(&preset(name, *seed)?)?;
                s.subject_id = format!("{name}-s{seed}");
                Ok(s)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            SubjectSource::Container(p) => p.display().to_string(),
            SubjectSource::Preset { name, seed } => format!("{name}-s{seed}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub subjects: Vec<SubjectSource>,
    pub models: Vec<ModelKind>,
    pub k: usize,
    pub seed: u64,
    pub eeg_percentile: f64,
    pub fmri_percentile: f64,
    pub early_percentile: f64,
    pub augment_factor: usize,
    /// Re-pair the training folds only; test folds keep their original pairs.
    pub augment_train_only: bool,
    pub c: f64,
    /// Regularization of the late-fusion stacker.
    pub stacker_c: f64,
    pub n_trees: usize,
    pub out_dir: PathBuf,
    /// Static reference rows: name and free text, printed under the table.
    pub baselines: Vec<(String, String)>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            subjects: Vec::new(),
            models: ModelKind::ALL.to_vec(),
            k: 4,
            seed: 0,
            eeg_percentile: 2.0,
            fmri_percentile: 1.0,
            early_percentile: 1.0,
            augment_factor: 15,
            augment_train_only: false,
            c: 0.1,
            stacker_c: 1.0,
            n_trees: 100,
            out_dir: PathBuf::from("results"),
            baselines: Vec::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true/false, got '{v}'"))),
    }
}

fn parse_list<T>(v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment. Repeated `subject`
    /// and `preset` keys accumulate. A preset given as `name:seed` is used
    /// once; a bare name is expanded over `seeds`.
    /// Relative paths, including the default `results` output directory,
    /// resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = Self {
            out_dir: base_dir.join("results"),
            ..Self::default()
        };
        let mut presets: Vec<(String, Option<u64>)> = Vec::new();
        let mut seeds: Vec<u64> = vec![0];
        let mut order: Vec<(bool, usize)> = Vec::new();
        let mut paths: Vec<PathBuf> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "subject" => {
                    order.push((false, paths.len()));
                    paths.push(base_dir.join(value));
                }
                "preset" => {
                    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        order.push((true, presets.len()));
                        presets.push(match item.split_once(':') {
                            Some((name, seed)) => (name.trim().to_string(), Some(parse_num(key, seed.trim())?)),
                            None => (item.to_string(), None),
                        });
                    }
                }
                "seeds" => seeds = parse_list(value, |s| parse_num(key, s))?,
                "models" => cfg.models = parse_list(value, ModelKind::parse)?,
                "k" => cfg.k = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "eeg_percentile" => cfg.eeg_percentile = parse_num(key, value)?,
                "fmri_percentile" => cfg.fmri_percentile = parse_num(key, value)?,
                "early_percentile" => cfg.early_percentile = parse_num(key, value)?,
                "augment_factor" => cfg.augment_factor = parse_num(key, value)?,
                "augment_train_only" => cfg.augment_train_only = parse_bool(key, value)?,
                "c" => cfg.c = parse_num(key, value)?,
                "stacker_c" => cfg.stacker_c = parse_num(key, value)?,
                "n_trees" => cfg.n_trees = parse_num(key, value)?,
                "out_dir" => cfg.out_dir = base_dir.join(value),
                _ => match key.strip_prefix("baseline.") {
                    Some(name) if !name.is_empty() => cfg.baselines.push((name.to_string(), value.to_string())),
                    _ => return Err(Error::Config(format!("line {}: unknown key '{key}'", lineno + 1))),
                },
            }
        }
        for (is_preset, i) in order {
            if is_preset {
                let (name, fixed) = &presets[i];
                let expanded = fixed.map_or_else(|| seeds.clone(), |s| vec![s]);
                for seed in expanded {
                    cfg.subjects.push(SubjectSource::Preset {
                        name: name.clone(),
                        seed,
                    });
                }
            } else {
                cfg.subjects.push(SubjectSource::Container(paths[i].clone()));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {}", self.k)));
        }
        if self.subjects.is_empty() {
            return Err(Error::Config("no subjects".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("no models".into()));
        }
        for (name, p) in [
            ("eeg_percentile", self.eeg_percentile),
            ("fmri_percentile", self.fmri_percentile),
            ("early_percentile", self.early_percentile),
        ] {
            if !(p > 0.0 && p <= 100.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 100], got {p}")));
            }
        }
        for (name, c) in [("c", self.c), ("stacker_c", self.stacker_c)] {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {c}")));
            }
        }
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be positive".into()));
        }
        for s in &self.subjects {
            if let SubjectSource::Preset { name, seed } = s {
                preset(name, *seed).map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it back gives the same configuration.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for s in &self.subjects {
            match s {
                SubjectSource::Container(p) => writeln!(out, "subject = {}", p.display()),
                SubjectSource::Preset { name, seed } => {
                    writeln!(out, "preset = {name}:{seed}")
                }
            }
            .expect("string write");
        }
        let models: Vec<&str> = self.models.iter().map(|m| m.name()).collect();
        let _ = writeln!(out, "models = {}", models.join(","));
        let _ = writeln!(out, "k = {}", self.k);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "eeg_percentile = {}", self.eeg_percentile);
        let _ = writeln!(out, "fmri_percentile = {}", self.fmri_percentile);
        let _ = writeln!(out, "early_percentile = {}", self.early_percentile);
        let _ = writeln!(out, "augment_factor = {}", self.augment_factor);
        let _ = writeln!(out, "augment_train_only = {}", self.augment_train_only);
        let _ = writeln!(out, "c = {}", self.c);
        let _ = writeln!(out, "stacker_c = {}", self.stacker_c);
        let _ = writeln!(out, "n_trees = {}", self.n_trees);
        let _ = writeln!(out, "out_dir = {}", self.out_dir.display());
        for (name, text) in &self.baselines {
            let _ = writeln!(out, "baseline.{name} = {text}");
        }
        out
    }

    pub fn fusion_config(&self, seed: u64) -> FusionConfig {
        let svm = SvmParams {
            c: self.c,
            ..SvmParams::default()
        };
        FusionConfig {
            eeg: PipelineConfig {
                percentile: self.eeg_percentile,
                standardize: false,
                model: ModelSpec::Forest(ForestParams {
                    n_trees: self.n_trees,
                    ..ForestParams::default()
                }),
            },
            fmri: PipelineConfig {
                percentile: self.fmri_percentile,
                standardize: true,
                model: ModelSpec::Svm(svm.clone()),
            },
            stacker: SvmParams {
                c: self.stacker_c,
                ..SvmParams::default()
            },
            early_percentile: self.early_percentile,
            early: svm,
            seed,
            ..FusionConfig::default()
        }
    }
}

/// Accuracies (percent) of one subject × model over the folds, or the error
/// that stopped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub folds: Vec<f64>,
    pub error: Option<String>,
}

impl Cell {
    pub fn mean(&self) -> Option<f64> {
        (self.error.is_none() && !self.folds.is_empty())
            .then(|| self.folds.iter().sum::<f64>() / self.folds.len() as f64)
    }

    /// Population standard deviation over folds.
    pub fn std(&self) -> Option<f64> {
        let m = self.mean()?;
        let var = self.folds.iter().map(|a| (a - m).powi(2)).sum::<f64>() / self.folds.len() as f64;
        Some(var.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub models: Vec<String>,
    pub subjects: Vec<String>,
    /// `cells[model][subject]`
    pub cells: Vec<Vec<Cell>>,
    pub baselines: Vec<(String, String)>,
}

impl MetricsTable {
    pub fn cell(&self, model: &str, subject: &str) -> Option<&Cell> {
        let m = self.models.iter().position(|x| x == model)?;
        let s = self.subjects.iter().position(|x| x == subject)?;
        Some(&self.cells[m][s])
    }

    /// Mean over subjects of the per-subject means; `None` if any failed.
    pub fn average(&self, model: usize) -> Option<f64> {
        let means: Option<Vec<f64>> = self.cells[model].iter().map(Cell::mean).collect();
        let means = means?;
        Some(means.iter().sum::<f64>() / means.len() as f64)
    }

    /// Mean over subjects of the per-subject fold std.
    pub fn average_std(&self, model: usize) -> Option<f64> {
        let stds: Option<Vec<f64>> = self.cells[model].iter().map(Cell::std).collect();
        let stds = stds?;
        Some(stds.iter().sum::<f64>() / stds.len() as f64)
    }

    /// Mean accuracy of `model` over all subjects, ignoring failed cells.
    pub fn model_mean(&self, model: &str) -> Option<f64> {
        let m = self.models.iter().position(|x| x == model)?;
        self.average(m)
    }
}

fn jobs() -> usize {
    std::env::var("NEUROFUSE_JOBS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Accuracy (percent) of one model on one fold split.
pub fn run_fold(
    cfg: &ExperimentConfig,
    model: ModelKind,
    train: &PairedExemplarSet,
    test: &PairedExemplarSet,
    seed: u64,
) -> Result<f64> {
    let fc = cfg.fusion_config(seed);
    let acc = match model {
        ModelKind::EegRf | ModelKind::FmriSvm => {
            let (modality, pc) = if model == ModelKind::EegRf {
                (Modality::Eeg, &fc.eeg)
            } else {
                (Modality::Fmri, &fc.fmri)
            };
            let pc = PipelineConfig {
                model: match &pc.model {
                    ModelSpec::Svm(p) => ModelSpec::Svm(SvmParams { seed, ..p.clone() }),
                    ModelSpec::Forest(p) => ModelSpec::Forest(ForestParams { seed, ..p.clone() }),
                },
                ..pc.clone()
            };
            let pipe = UnimodalPipeline::fit_modality(train, modality, &pc)?;
            let proba = pipe.predict_modality(test, modality)?;
            accuracy(&crate::classify::argmax_rows(&proba), &test.labels)
        }
        ModelKind::Early => {
            let m = early_fuse_train(train, &fc)?;
            accuracy(&fusion_predict(&m, test)?.labels, &test.labels)
        }
        ModelKind::EarlyAug => {
            let aug_train = augment_pairs(train, cfg.augment_factor, derive(seed, tag("aug-train")))?;
            let eval = if cfg.augment_train_only {
                test.clone()
            } else {
                augment_pairs(test, cfg.augment_factor, derive(seed, tag("aug-test")))?
            };
            let m = early_fuse_train(&aug_train, &fc)?;
            accuracy(&fusion_predict(&m, &eval)?.labels, &eval.labels)
        }
        ModelKind::Late => {
            let m = late_fuse_train(train, &fc)?;
            accuracy(&fusion_predict(&m, test)?.labels, &test.labels)
        }
    };
    Ok(100.0 * acc)
}

/// Runs every (model, fold) of one subject. Results do not depend on the
/// order in which workers finish.
pub fn run_subject(cfg: &ExperimentConfig, subject: &BimodalSubject) -> Result<Vec<Cell>> {
    subject.validate(cfg.k)?;
    let set = Arc::new(PairedExemplarSet::from_subject(subject)?);
    let subject_seed = derive(cfg.seed, tag(&subject.subject_id) ^ subject.seed);
    let plan = plan_folds(&set.labels, cfg.k, derive(subject_seed, tag("folds")))?;
    let tasks: Vec<(usize, usize)> = (0..cfg.models.len())
        .flat_map(|m| (0..cfg.k).map(move |f| (m, f)))
        .collect();
    let run = |&(m, f): &(usize, usize)| {
        let model = cfg.models[m];
        let (train, test) = plan.split(f);
        let seed = derive(subject_seed, tag(model.name()) ^ (f as u64) << 32);
        run_fold(cfg, model, &set.subset(&train), &set.subset(&test), seed)
            .map_err(|e| format!("{} / {} / fold {}: {e}", subject.subject_id, model.name(), f + 1))
    };
    let results: Vec<std::result::Result<f64, String>> = if jobs() > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs())
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        pool.install(|| tasks.par_iter().map(run).collect())
    } else {
        tasks.iter().map(run).collect()
    };
    let mut cells = Vec::with_capacity(cfg.models.len());
    for chunk in results.chunks(cfg.k) {
        let error = chunk.iter().find_map(|r| r.as_ref().err().cloned());
        let folds = chunk.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        cells.push(Cell { folds, error });
    }
    Ok(cells)
}

/// Runs the whole experiment. A subject that fails to load or validate
/// marks all its cells failed; other subjects still run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsTable> {
    cfg.validate()?;
    let mut subjects = Vec::new();
    let mut columns: Vec<Vec<Cell>> = Vec::new();
    for source in &cfg.subjects {
        let outcome = source.load().and_then(|s| {
            let cells = run_subject(cfg, &s)?;
            Ok((s.subject_id, cells))
        });
        match outcome {
            Ok((id, cells)) => {
                subjects.push(id);
                columns.push(cells);
            }
            Err(e) => {
                let label = source.label();
                let msg = format!("{label}: {e}");
                subjects.push(label);
                columns.push(
                    cfg.models
                        .iter()
                        .map(|_| Cell {
                            folds: Vec::new(),
                            error: Some(msg.clone()),
                        })
                        .collect(),
                );
            }
        }
    }
    let cells = (0..cfg.models.len())
        .map(|m| columns.iter().map(|col| col[m].clone()).collect())
        .collect();
    Ok(MetricsTable {
        models: cfg.models.iter().map(|m| m.name().to_string()).collect(),
        subjects,
        cells,
        baselines: cfg.baselines.clone(),
    })
}

const FAILED: &str = "—";

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| FAILED.to_string(), |x| format!("{x:.2}"))
}

/// Fixed-width table: for each model a mean row and a `std.` row, subjects
/// as columns plus `Avg.`, then footnotes and the error appendix.
pub fn render_table(m: &MetricsTable) -> Result<String> {
    if m.models.is_empty() || m.subjects.is_empty() {
        return Err(Error::InvalidParameter("empty table".into()));
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["Model".to_string()];
    header.extend(m.subjects.iter().cloned());
    header.push("Avg.".into());
    rows.push(header);
    for (i, name) in m.models.iter().enumerate() {
        let mut mean_row = vec![name.clone()];
        let mut std_row = vec!["std.".to_string()];
        for c in &m.cells[i] {
            mean_row.push(fmt_cell(c.mean()));
            std_row.push(fmt_cell(c.std()));
        }
        mean_row.push(fmt_cell(m.average(i)));
        std_row.push(fmt_cell(m.average_std(i)));
        rows.push(mean_row);
        rows.push(std_row);
    }
    let n_cols = rows[0].len();
    let widths: Vec<usize> = (0..n_cols)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (r, row) in rows.iter().enumerate() {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                line.push_str(cell);
                line.push_str(&" ".repeat(pad));
            } else {
                line.push_str("  ");
                line.push_str(&" ".repeat(pad));
                line.push_str(cell);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
        if r == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (n_cols - 1)));
            out.push('\n');
        }
    }
    out.push_str("\nAccuracy in %. std. is the population standard deviation over folds;\n");
    out.push_str("Avg. std. is the mean of the per-subject values. Chance is 12.50.\n");
    if !m.baselines.is_empty() {
        out.push_str("\nReference rows:\n");
        for (name, text) in &m.baselines {
            let _ = writeln!(out, "  {name}: {text}");
        }
    }
    let errors: Vec<&String> = m.cells.iter().flatten().filter_map(|c| c.error.as_ref()).collect();
    if !errors.is_empty() {
        out.push_str("\nFailed cells:\n");
        let mut seen = std::collections::BTreeSet::new();
        for e in errors {
            if seen.insert(e) {
                let _ = writeln!(out, "  {e}");
            }
        }
    }
    Ok(out)
}

/// One line per cell: `model,subject,mean,std,folds,error`, folds separated
/// by `;`. Fold accuracies are written with full precision.
pub fn table_to_csv(m: &MetricsTable) -> String {
    let mut out = String::from("model,subject,mean,std,folds,error\n");
    for (i, model) in m.models.iter().enumerate() {
        for (j, subject) in m.subjects.iter().enumerate() {
            let c = &m.cells[i][j];
            let folds: Vec<String> = c.folds.iter().map(|f| format!("{f:?}")).collect();
            let _ = writeln!(
                out,
                "{model},{subject},{},{},{},{}",
                c.mean().map_or(String::new(), |v| format!("{v:.6}")),
                c.std().map_or(String::new(), |v| format!("{v:.6}")),
                folds.join(";"),
                c.error.as_deref().unwrap_or("").replace([',', '\n'], " ")
            );
        }
    }
    for (name, text) in &m.baselines {
        let _ = writeln!(out, "#baseline,{name},,,,{}", text.replace([',', '\n'], " "));
    }
    out
}

pub fn table_from_csv(text: &str) -> Result<MetricsTable> {
    let mut lines = text.lines();
    match lines.next() {
        Some("model,subject,mean,std,folds,error") => {}
        _ => return Err(Error::Config("not a results table (bad header)".into())),
    }
    let mut models: Vec<String> = Vec::new();
    let mut subjects: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), Cell> = BTreeMap::new();
    let mut baselines = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.splitn(6, ',').collect();
        if fields.len() != 6 {
            return Err(Error::Config(format!("table line {}: expected 6 fields", n + 2)));
        }
        if fields[0] == "#baseline" {
            baselines.push((fields[1].to_string(), fields[5].to_string()));
            continue;
        }
        let index = |list: &mut Vec<String>, v: &str| {
            list.iter().position(|x| x == v).unwrap_or_else(|| {
                list.push(v.to_string());
                list.len() - 1
            })
        };
        let m = index(&mut models, fields[0]);
        let s = index(&mut subjects, fields[1]);
        let folds = fields[4]
            .split(';')
            .filter(|f| !f.is_empty())
            .map(|f| parse_num::<f64>("fold", f))
            .collect::<Result<Vec<_>>>()?;
        let error = (!fields[5].is_empty()).then(|| fields[5].to_string());
        cells.insert((m, s), Cell { folds, error });
    }
    let cells = (0..models.len())
        .map(|m| {
            (0..subjects.len())
                .map(|s| {
                    cells.remove(&(m, s)).unwrap_or(Cell {
                        folds: Vec::new(),
                        error: Some("missing from table".into()),
                    })
                })
                .collect()
        })
        .collect();
    Ok(MetricsTable {
        models,
        subjects,
        cells,
        baselines,
    })
}

/// Writes `table.txt`, `table.csv` and `config_snapshot` into `dir`.
pub fn write_results(m: &MetricsTable, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    };
    write("table.txt", render_table(m)?)?;
    write("table.csv", table_to_csv(m))?;
    write("config_snapshot", cfg.snapshot())
}
