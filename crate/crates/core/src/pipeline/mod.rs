//! Config-driven workflow: ingest, features, train, evaluate, explain, refine
//! and report. Every stage persists its outputs under one output directory
//! so a run can be audited and reproduced from disk.

pub mod config;
pub mod plot;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::eval::{
    chronological_split, comparison_csv, comparison_text, peak_slice, window_report, ComparisonRow, EvalError,
    MetricSet, Split,
};
use crate::explain::{
    attributions_csv, explain_rows, importance, importance_svg, stratified_background, Attribution, ExplainError,
    ImportanceReport, Method, RowSet,
};
use crate::features::{build_matrix, FeatureError, FeatureMatrix, FeatureSpec};
use crate::ingest::{
    align, parse_load_csv, parse_weather_csv, regularize, weight_weather, AlignedDataset, CityWeather, IngestError,
    IngestReport, SeriesReport, SeriesSchema, LOAD_COLUMN, WEATHER_VARIABLES,
};
use crate::models::{
    fit_gbdt, fit_lstm, fit_ols, Family, ModelArtifact, ModelError, ModelPayload, TrainingMeta,
};
use crate::time::Timestamp;

pub use config::{ExplainMethod, PipelineConfig, RowSource, TargetMetric};

/// Exit status for failures caused by the inputs: config, data, features,
/// split and unsupported requests.
pub const EXIT_INPUT: i32 = 2;
/// Exit status for everything else.
pub const EXIT_RUNTIME: i32 = 1;

const FORECAST_POINTS: usize = 1200;
const IMPORTANCE_BARS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Runtime,
}

#[derive(Debug)]
pub struct PipelineError {
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    pub fn input(message: String) -> Self {
        PipelineError { kind: ErrorKind::Input, message }
    }

    pub fn runtime(message: String) -> Self {
        PipelineError { kind: ErrorKind::Runtime, message }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Input => EXIT_INPUT,
            ErrorKind::Runtime => EXIT_RUNTIME,
        }
    }

    fn context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for PipelineError {}

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        PipelineError::input(e.to_string())
    }
}

impl From<FeatureError> for PipelineError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::File { .. } => PipelineError::runtime(e.to_string()),
            _ => PipelineError::input(e.to_string()),
        }
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        PipelineError::input(e.to_string())
    }
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidParams(_)
            | ModelError::SchemaMismatch { .. }
            | ModelError::TooFewRows { .. }
            | ModelError::EmptyMatrix
            | ModelError::Unsupported(_)
            | ModelError::UnsupportedVersion(_) => PipelineError::input(e.to_string()),
            _ => PipelineError::runtime(e.to_string()),
        }
    }
}

impl From<ExplainError> for PipelineError {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::TooManyFeatures(_)
            | ExplainError::BackgroundSize(_)
            | ExplainError::WrongFamily
            | ExplainError::Unsupported(_) => PipelineError::input(e.to_string()),
            _ => PipelineError::runtime(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::runtime(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("pipeline records serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    Baseline,
    Refined,
}

impl FeatureSet {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::Baseline => "baseline",
            FeatureSet::Refined => "refined",
        }
    }
}

impl FromStr for FeatureSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(FeatureSet::Baseline),
            "refined" => Ok(FeatureSet::Refined),
            _ => Err(format!("unknown feature set `{s}` (expected baseline or refined)")),
        }
    }
}

/// Which rows an explanation covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scope {
    Global,
    Peak,
    Window(String),
}

impl Scope {
    /// File-name stem for this scope's outputs.
    pub fn key(&self) -> String {
        match self {
            Scope::Global => "global".into(),
            Scope::Peak => "peak".into(),
            Scope::Window(name) => format!("window-{name}"),
        }
    }

    fn row_set(&self) -> RowSet {
        match self {
            Scope::Global => RowSet::Global,
            Scope::Peak => RowSet::PeakWindow,
            Scope::Window(name) => RowSet::Named(name.clone()),
        }
    }
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "global" => Ok(Scope::Global),
            "peak" => Ok(Scope::Peak),
            _ => match s.strip_prefix("window:") {
                Some(name) if !name.is_empty() => Ok(Scope::Window(name.to_string())),
                _ => Err(format!("unknown scope `{s}` (expected global, peak or window:NAME)")),
            },
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub allow_leakage: bool,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub test: MetricSet,
    pub train: MetricSet,
    pub windows: BTreeMap<String, MetricSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config_hash: String,
    pub split_hash: String,
    pub label: String,
    pub family: Family,
    pub seed: u64,
    pub allow_leakage: bool,
    pub specs: Vec<FeatureSpec>,
    pub features: Vec<String>,
    pub warmup: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub metrics: RunMetrics,
    /// Importance reports keyed by scope.
    pub importance: BTreeMap<String, ImportanceReport>,
    /// Files in the run directory, relative to it.
    pub files: Vec<String>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl RunRecord {
    fn add_file(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
            self.files.sort();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankChange {
    pub feature: String,
    pub before_global: Option<usize>,
    pub after_global: Option<usize>,
    pub before_peak: Option<usize>,
    pub after_peak: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub feature: String,
    /// Rank in the refined run's global importance, zero-based.
    pub rank: Option<usize>,
    pub full: f64,
    pub ablated: f64,
    /// `ablated − full`; positive means the feature helped.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub features: Vec<String>,
    pub metrics: RunMetrics,
    pub global_ranking: Vec<String>,
    pub peak_ranking: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub metric: TargetMetric,
    pub split_hash: String,
    pub candidates: Vec<String>,
    pub before: RunSummary,
    pub after: RunSummary,
    pub rank_changes: Vec<RankChange>,
    pub ablation: Vec<AblationRow>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub files: Vec<String>,
}

/// Output-directory lock; removed on drop.
#[derive(Debug)]
struct OutLock {
    path: PathBuf,
}

impl OutLock {
    fn acquire(out: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(out).map_err(io_err(out))?;
        let path = out.join(".loadlens.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(OutLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::runtime(format!(
                "output directory {} is in use by another process (remove {} if it is stale)",
                out.display(),
                path.display()
            ))),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for OutLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Run log kept in memory and echoed to stderr.
#[derive(Debug, Default)]
struct Log {
    lines: Vec<String>,
}

impl Log {
    fn line(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("{msg}");
        self.lines.push(msg);
    }

    fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

/// A fitted model with its matrix, split and predictions, before anything
/// is written to disk.
struct Fitted {
    artifact: ModelArtifact,
    matrix: FeatureMatrix,
    split: Split,
    predictions: Vec<f64>,
    metrics: RunMetrics,
}

impl Fitted {
    fn test_predictions(&self) -> &[f64] {
        &self.predictions[self.split.test_offset..self.split.test_offset + self.split.test.n_rows()]
    }
}

pub struct Pipeline {
    pub config: PipelineConfig,
    config_dir: PathBuf,
    out: PathBuf,
    _lock: OutLock,
}

impl Pipeline {
    pub fn open(config_path: &Path, overrides: Overrides) -> Result<Self, PipelineError> {
        let config = PipelineConfig::from_path(config_path)?;
        let config_dir = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::with_config(config, &config_dir, overrides)
    }

    /// Paths in `config` resolve against `config_dir`.
    pub fn with_config(
        mut config: PipelineConfig,
        config_dir: &Path,
        overrides: Overrides,
    ) -> Result<Self, PipelineError> {
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if overrides.allow_leakage {
            config.features.allow_leakage = true;
        }
        config.validate()?;
        let config_dir = if config_dir.as_os_str().is_empty() { PathBuf::from(".") } else { config_dir.to_path_buf() };
        let out = match (overrides.out, &config.out_dir) {
            (Some(out), _) => out,
            (None, Some(dir)) => config_dir.join(dir),
            (None, None) => config_dir.join("out"),
        };
        let lock = OutLock::acquire(&out)?;
        Ok(Pipeline { config, config_dir, out, _lock: lock })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.out.join("runs").join(run_id)
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.config_dir.join(path)
        }
    }

    /// Reads, regularizes, weights and aligns the configured inputs.
    pub fn load_dataset(&self) -> Result<AlignedDataset, PipelineError> {
        let data = &self.config.data;
        let schema = SeriesSchema {
            timestamp_column: data.load.timestamp_column.clone(),
            value_column: data.load.value_column.clone(),
        };
        let raw_load = parse_load_csv(&self.resolve(&data.load.path), &schema)?;
        let mut duplicates = raw_load.duplicates_collapsed;
        let load = regularize(&raw_load, data.max_interp_gap)?;
        let mut inputs = vec![SeriesReport { name: LOAD_COLUMN.into(), counts: load.counts() }];
        let mut cities = Vec::with_capacity(data.cities.len());
        for city in &data.cities {
            let raw = parse_weather_csv(&self.resolve(&city.path), &city.timestamp_column, &WEATHER_VARIABLES)?;
            let mut series = BTreeMap::new();
            for (var, rs) in raw {
                duplicates += rs.duplicates_collapsed;
                let hourly = regularize(&rs, data.max_interp_gap)
                    .map_err(|e| PipelineError::from(e).context(&city.name))?;
                inputs.push(SeriesReport { name: format!("{}/{var}", city.name), counts: hourly.counts() });
                series.insert(var, hourly);
            }
            cities.push(CityWeather { city: city.name.clone(), population_weight: city.weight, series });
        }
        let weather = weight_weather(&cities)?;
        let mut dataset = align(&load, &weather)?;
        dataset.provenance.inputs = inputs;
        dataset.provenance.duplicates_collapsed = duplicates;
        Ok(dataset)
    }

    /// `ingest`: writes `dataset.csv` and `ingest_report.json`.
    pub fn ingest(&self) -> Result<IngestReport, PipelineError> {
        let dataset = self.load_dataset()?;
        dataset.write_csv(&self.out.join("dataset.csv"))?;
        write_file(&self.out.join("ingest_report.json"), to_json(&dataset.provenance))?;
        Ok(dataset.provenance)
    }

    pub fn specs(&self, set: FeatureSet) -> Vec<FeatureSpec> {
        match set {
            FeatureSet::Baseline => self.config.baseline_specs(),
            FeatureSet::Refined => self.refined_with(&self.config.candidates()),
        }
    }

    /// Baseline plus the refined candidates and whatever they are built
    /// from. Supporting specs that are not candidates are computed but not
    /// emitted.
    fn refined_with(&self, candidates: &[String]) -> Vec<FeatureSpec> {
        let all = self.config.refined_specs();
        let by_name: BTreeMap<&str, &FeatureSpec> = all.iter().map(|s| (s.name.as_str(), s)).collect();
        let baseline: BTreeSet<&str> = self.config.features.baseline.iter().map(|s| s.name.as_str()).collect();
        let mut needed: BTreeSet<&str> = BTreeSet::new();
        let mut stack: Vec<&str> = candidates.iter().map(String::as_str).collect();
        while let Some(name) = stack.pop() {
            if baseline.contains(name) || !needed.insert(name) {
                continue;
            }
            if let Some(spec) = by_name.get(name) {
                stack.extend(spec.operands());
            }
        }
        let mut out = self.config.baseline_specs();
        for spec in &self.config.features.refined {
            if needed.contains(spec.name.as_str()) {
                let mut s = spec.clone();
                s.emit = s.emit && candidates.contains(&s.name);
                out.push(s);
            }
        }
        out
    }

    fn matrix(&self, dataset: &AlignedDataset, specs: &[FeatureSpec]) -> Result<FeatureMatrix, PipelineError> {
        Ok(build_matrix(dataset, specs, &self.config.split.train_range(), self.config.build_options())?)
    }

    /// `features`: writes `features_<set>.csv`.
    pub fn features(&self, set: FeatureSet) -> Result<FeatureMatrix, PipelineError> {
        let dataset = self.load_dataset()?;
        let m = self.matrix(&dataset, &self.specs(set))?;
        m.write_csv(&self.out.join(format!("features_{}.csv", set.as_str())))?;
        Ok(m)
    }

    fn score(&self, matrix: &FeatureMatrix, split: &Split, predictions: &[f64]) -> Result<RunMetrics, PipelineError> {
        let opts = self.config.eval;
        let test_pred = &predictions[split.test_offset..split.test_offset + split.test.n_rows()];
        let train_pred = &predictions[split.train_offset..split.train_offset + split.train.n_rows()];
        debug_assert_eq!(matrix.n_rows(), predictions.len());
        Ok(RunMetrics {
            test: MetricSet::compute(&split.test.target, test_pred, opts)?,
            train: MetricSet::compute(&split.train.target, train_pred, opts)?,
            windows: window_report(&split.test.target, test_pred, &split.test.axis, &self.config.split.peak_windows, opts)?,
        })
    }

    fn fit(&self, dataset: &AlignedDataset, specs: &[FeatureSpec], log: &mut Log) -> Result<Fitted, PipelineError> {
        let matrix = self.matrix(dataset, specs)?;
        if matrix.n_features() == 0 {
            return Err(PipelineError::input("feature set emits no columns".into()));
        }
        let split = chronological_split(&matrix, &self.config.split)?;
        let model = &self.config.model;
        let (payload, hyper) = match model.family {
            Family::Linear => {
                let m = fit_ols(&split.train)?;
                if m.is_rank_deficient() {
                    log.line(format!(
                        "warning: design matrix is rank deficient (rank {} of {}); using the minimum-norm solution",
                        m.rank,
                        m.names.len() + 1
                    ));
                }
                (ModelPayload::Linear(m), serde_json::json!({}))
            }
            Family::Gbdt => {
                let e = fit_gbdt(&split.train, &model.gbdt)?;
                (ModelPayload::Gbdt(e), serde_json::to_value(&model.gbdt).expect("params serialize"))
            }
            Family::Lstm => {
                let mut params = model.lstm.clone();
                params.seed = params.seed.wrapping_add(self.config.seed);
                let m = fit_lstm(&split.train, &params)?;
                if let Some(last) = m.loss_history.last() {
                    log.line(format!("lstm: final epoch loss {last:.6}"));
                }
                (ModelPayload::Lstm(m), serde_json::to_value(&params).expect("params serialize"))
            }
        };
        let meta = TrainingMeta {
            hyperparameters: hyper,
            train_start: split.train.axis.start,
            train_end: split.train.axis.last().expect("split sides are nonempty"),
            train_rows: split.train.n_rows(),
            seed: self.config.seed,
        };
        let artifact = ModelArtifact::new(payload, matrix.names.clone(), meta);
        let predictions = artifact.predict(&matrix)?;
        let metrics = self.score(&matrix, &split, &predictions)?;
        Ok(Fitted { artifact, matrix, split, predictions, metrics })
    }

    fn run_id(&self, label: &str, specs: &[FeatureSpec]) -> String {
        let body = serde_json::json!({ "config": self.config.hash(), "label": label, "specs": specs });
        let h = config::sha256_hex(body.to_string().as_bytes());
        format!("{}-{label}-{}", self.config.model.family.as_str(), &h[..12])
    }

    /// The effective config with data paths made absolute, so the copy in a
    /// run directory still points at the inputs.
    fn config_copy(&self) -> Result<String, PipelineError> {
        let mut c = self.config.clone();
        c.out_dir = None;
        let abs = |p: &Path| {
            let p = self.resolve(p);
            fs::canonicalize(&p).unwrap_or(p)
        };
        c.data.load.path = abs(&c.data.load.path);
        for city in &mut c.data.cities {
            city.path = abs(&city.path);
        }
        toml::to_string(&c).map_err(|e| PipelineError::runtime(format!("cannot serialize config: {e}")))
    }

    fn train_labelled(
        &self,
        dataset: &AlignedDataset,
        label: &str,
        specs: Vec<FeatureSpec>,
    ) -> Result<(RunRecord, Fitted), PipelineError> {
        let mut log = Log::default();
        let run_id = self.run_id(label, &specs);
        log.line(format!("run {run_id}: training {} on {} features", self.config.model.family.as_str(), label));
        let started = Instant::now();
        let fitted = self.fit(dataset, &specs, &mut log)?;
        let fit_secs = started.elapsed().as_secs_f64();
        let m = &fitted.metrics.test;
        log.line(format!(
            "test: rmse {:.3} mae {:.3} mape {:.3}% peak_mape {:.3}% (n {}, k {})",
            m.rmse, m.mae, m.mape, m.peak_mape, m.n, m.k
        ));

        let dir = self.run_dir(&run_id);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut record = RunRecord {
            run_id,
            config_hash: self.config.hash(),
            split_hash: self.config.split_hash(),
            label: label.to_string(),
            family: self.config.model.family,
            seed: self.config.seed,
            allow_leakage: self.config.features.allow_leakage,
            specs,
            features: fitted.matrix.names.clone(),
            warmup: fitted.matrix.warmup,
            train_rows: fitted.split.train.n_rows(),
            test_rows: fitted.split.test.n_rows(),
            metrics: fitted.metrics.clone(),
            importance: BTreeMap::new(),
            files: Vec::new(),
            timings: BTreeMap::from([("fit".to_string(), fit_secs)]),
        };
        write_file(&dir.join("config.toml"), self.config_copy()?)?;
        record.add_file("config.toml");
        fitted.artifact.save(&dir.join("model.json"))?;
        record.add_file("model.json");
        write_file(&dir.join("metrics.json"), to_json(&record.metrics))?;
        record.add_file("metrics.json");
        write_file(&dir.join("predictions.csv"), predictions_csv(&fitted.split.test.axis.iter().collect::<Vec<_>>(), &fitted.split.test.target, fitted.test_predictions()))?;
        record.add_file("predictions.csv");
        self.append_log(&dir, &log)?;
        record.add_file("run.log");
        record.add_file("run.json");
        self.save_record(&record)?;
        Ok((record, fitted))
    }

    fn append_log(&self, dir: &Path, log: &Log) -> Result<(), PipelineError> {
        use std::io::Write;
        let path = dir.join("run.log");
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        f.write_all(log.text().as_bytes()).map_err(io_err(&path))
    }

    fn save_record(&self, record: &RunRecord) -> Result<(), PipelineError> {
        write_file(&self.run_dir(&record.run_id).join("run.json"), to_json(record))
    }

    pub fn load_record(&self, run_id: &str) -> Result<RunRecord, PipelineError> {
        let path = self.run_dir(run_id).join("run.json");
        if !path.exists() {
            return Err(PipelineError::input(format!("no run `{run_id}` under {}", self.out.join("runs").display())));
        }
        serde_json::from_str(&read_file(&path)?)
            .map_err(|e| PipelineError::runtime(format!("{}: {e}", path.display())))
    }

    /// `train`: fits the configured family on one feature set.
    pub fn train(&self, set: FeatureSet) -> Result<RunRecord, PipelineError> {
        let dataset = self.load_dataset()?;
        Ok(self.train_labelled(&dataset, set.as_str(), self.specs(set))?.0)
    }

    /// `evaluate`: re-predicts from the saved artifact and rewrites the
    /// run's metrics.
    pub fn evaluate(&self, run_id: &str) -> Result<RunMetrics, PipelineError> {
        let mut record = self.load_record(run_id)?;
        let dir = self.run_dir(run_id);
        let artifact = ModelArtifact::load(&dir.join("model.json"))?;
        let dataset = self.load_dataset()?;
        let matrix = self.matrix(&dataset, &record.specs)?;
        let split = chronological_split(&matrix, &self.config.split)?;
        let started = Instant::now();
        let predictions = artifact.predict(&matrix)?;
        let metrics = self.score(&matrix, &split, &predictions)?;
        let mut log = Log::default();
        log.line(format!(
            "evaluate {run_id}: test rmse {:.3} peak_mape {:.3}%",
            metrics.test.rmse, metrics.test.peak_mape
        ));
        write_file(&dir.join("metrics.json"), to_json(&metrics))?;
        self.append_log(&dir, &log)?;
        record.metrics = metrics.clone();
        record.timings.insert("evaluate".into(), started.elapsed().as_secs_f64());
        self.save_record(&record)?;
        Ok(metrics)
    }

    fn resolve_method(&self, artifact: &ModelArtifact) -> Result<Method, PipelineError> {
        let n = artifact.feature_schema.len();
        match (self.config.explain.method, artifact.family()) {
            (_, Family::Lstm) => Err(PipelineError::input(
                "attributions need a row-wise model; recurrent runs cannot be explained".into(),
            )),
            (ExplainMethod::Auto, Family::Gbdt) => Ok(Method::Tree),
            (ExplainMethod::Auto, _) if n <= self.config.explain.exact_limit => Ok(Method::Exact),
            (ExplainMethod::Auto, _) => Ok(Method::Sampled),
            (ExplainMethod::Tree, _) => Ok(Method::Tree),
            (ExplainMethod::Exact, _) => Ok(Method::Exact),
            (ExplainMethod::Sampled, _) => Ok(Method::Sampled),
        }
    }

    /// Row indices of `rows` covered by `scope`.
    fn scope_rows(&self, rows: &FeatureMatrix, scope: &Scope) -> Result<Vec<usize>, PipelineError> {
        let cap = self.config.explain.max_rows;
        let idx: Vec<usize> = match scope {
            Scope::Global => evenly(&(0..rows.n_rows()).collect::<Vec<_>>(), cap),
            // Every peak hour is explained; the peak slice is already small.
            Scope::Peak => peak_slice(&rows.target, self.config.eval.peak_fraction),
            Scope::Window(name) => {
                let w = self
                    .config
                    .split
                    .peak_windows
                    .iter()
                    .find(|w| &w.name == name)
                    .ok_or_else(|| PipelineError::input(format!("no peak window named `{name}`")))?;
                let range = w.range();
                let inside: Vec<usize> = (0..rows.n_rows()).filter(|&i| range.contains(rows.timestamp(i))).collect();
                evenly(&inside, cap)
            }
        };
        if idx.is_empty() {
            return Err(PipelineError::input(format!("scope `{}` selects no rows", scope.key())));
        }
        Ok(idx)
    }

    fn explain_fitted(
        &self,
        record: &mut RunRecord,
        artifact: &ModelArtifact,
        split: &Split,
        scope: &Scope,
    ) -> Result<(ImportanceReport, Vec<Attribution>), PipelineError> {
        let started = Instant::now();
        let method = self.resolve_method(artifact)?;
        let bg_idx = stratified_background(&split.train, self.config.explain.background);
        let background: Vec<Vec<f64>> = bg_idx.iter().map(|&i| split.train.row(i)).collect();
        let rows = match self.config.explain.rows {
            RowSource::Test => &split.test,
            RowSource::Train => &split.train,
        };
        let idx = self.scope_rows(rows, scope)?;
        let attrs = explain_rows(
            artifact,
            rows,
            &idx,
            background,
            method,
            self.config.explain.permutations,
            self.config.seed,
        )?;
        let report = importance(&attrs, scope.row_set())?;
        let worst = attrs.iter().map(Attribution::local_accuracy_gap).fold(0.0, f64::max);

        let dir = self.run_dir(&record.run_id);
        let key = scope.key();
        let mut log = Log::default();
        log.line(format!(
            "explain {} [{key}]: {} rows, method {method:?}, background {}, max |base + sum(phi) - f(x)| = {worst:.3e}",
            record.run_id,
            idx.len(),
            bg_idx.len()
        ));
        log.line(format!("top features: {}", report.top(5).join(", ")));
        let files = [
            (format!("attributions_{key}.csv"), attributions_csv(&attrs)),
            (format!("importance_{key}.json"), to_json(&report)),
            (
                format!("importance_{key}.svg"),
                importance_svg(&report, &format!("{} ({key})", record.run_id), IMPORTANCE_BARS),
            ),
        ];
        for (name, body) in &files {
            write_file(&dir.join(name), body)?;
            record.add_file(name);
        }
        self.append_log(&dir, &log)?;
        record.importance.insert(key.clone(), report.clone());
        record.timings.insert(format!("explain_{key}"), started.elapsed().as_secs_f64());
        self.save_record(record)?;
        Ok((report, attrs))
    }

    /// `explain`: attributions for one scope of a finished run.
    pub fn explain(&self, run_id: &str, scope: &Scope) -> Result<ImportanceReport, PipelineError> {
        let mut record = self.load_record(run_id)?;
        let artifact = ModelArtifact::load(&self.run_dir(run_id).join("model.json"))?;
        self.resolve_method(&artifact)?;
        let dataset = self.load_dataset()?;
        let matrix = self.matrix(&dataset, &record.specs)?;
        artifact.check_schema(&matrix.names)?;
        let split = chronological_split(&matrix, &self.config.split)?;
        Ok(self.explain_fitted(&mut record, &artifact, &split, scope)?.0)
    }

    /// Same as [`Pipeline::explain`] but also returns the per-row attributions.
    pub fn explain_with_rows(
        &self,
        run_id: &str,
        scope: &Scope,
    ) -> Result<(ImportanceReport, Vec<Attribution>), PipelineError> {
        let mut record = self.load_record(run_id)?;
        let artifact = ModelArtifact::load(&self.run_dir(run_id).join("model.json"))?;
        let dataset = self.load_dataset()?;
        let matrix = self.matrix(&dataset, &record.specs)?;
        let split = chronological_split(&matrix, &self.config.split)?;
        self.explain_fitted(&mut record, &artifact, &split, scope)
    }

    /// `refine`: baseline run and its explanations, the refined run with the
    /// candidates injected and its explanations, then one retrain per
    /// ablated feature.
    pub fn refine(&self) -> Result<RefineReport, PipelineError> {
        let dataset = self.load_dataset()?;
        let metric = self.config.refine.metric;
        let candidates = self.config.candidates();
        let explainable = self.config.model.family != Family::Lstm;

        let (mut before, before_fit) = self.train_labelled(&dataset, "baseline", self.specs(FeatureSet::Baseline))?;
        let after_specs = self.refined_with(&candidates);
        let (mut after, after_fit) = self.train_labelled(&dataset, "refined", after_specs.clone())?;
        if before.split_hash != after.split_hash {
            return Err(PipelineError::runtime("refinement changed the split".into()));
        }
        if explainable {
            for scope in [Scope::Global, Scope::Peak] {
                self.explain_fitted(&mut before, &before_fit.artifact, &before_fit.split, &scope)?;
                self.explain_fitted(&mut after, &after_fit.artifact, &after_fit.split, &scope)?;
            }
        }

        let full = metric.of(&after.metrics.test);
        let mut ablation = Vec::new();
        for name in self.config.ablation() {
            if !after.features.contains(&name) {
                continue;
            }
            let specs = without(&after_specs, &name);
            let mut log = Log::default();
            let fitted = self.fit(&dataset, &specs, &mut log)?;
            let ablated = metric.of(&fitted.metrics.test);
            eprintln!("ablate {name}: {metric:?} {full:.4} -> {ablated:.4}");
            ablation.push(AblationRow {
                rank: after.importance.get("global").and_then(|r| r.rank_of(&name)),
                feature: name,
                full,
                ablated,
                delta: ablated - full,
            });
        }

        let rank = |r: &RunRecord, key: &str, f: &str| r.importance.get(key).and_then(|rep| rep.rank_of(f));
        let rank_changes = after
            .features
            .iter()
            .map(|f| RankChange {
                feature: f.clone(),
                before_global: rank(&before, "global", f),
                after_global: rank(&after, "global", f),
                before_peak: rank(&before, "peak", f),
                after_peak: rank(&after, "peak", f),
            })
            .collect();
        let summary = |r: &RunRecord| RunSummary {
            run_id: r.run_id.clone(),
            features: r.features.clone(),
            metrics: r.metrics.clone(),
            global_ranking: r.importance.get("global").map(|i| i.ranking.clone()).unwrap_or_default(),
            peak_ranking: r.importance.get("peak").map(|i| i.ranking.clone()).unwrap_or_default(),
        };
        let mut report = RefineReport {
            metric,
            split_hash: after.split_hash.clone(),
            candidates,
            before: summary(&before),
            after: summary(&after),
            rank_changes,
            ablation,
            files: Vec::new(),
        };

        let dir = self.out.join("refine");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let rows = vec![
            ComparisonRow { label: before.run_id.clone(), metrics: before.metrics.test },
            ComparisonRow { label: after.run_id.clone(), metrics: after.metrics.test },
        ];
        report.files =
            ["ablation.csv", "comparison.csv", "comparison.txt", "report.json", "report.txt"].map(String::from).to_vec();
        write_file(&dir.join("comparison.csv"), comparison_csv(&rows))?;
        write_file(&dir.join("comparison.txt"), comparison_text(&rows))?;
        write_file(&dir.join("ablation.csv"), ablation_csv(&report.ablation))?;
        write_file(&dir.join("report.txt"), refine_text(&report, &rows))?;
        write_file(&dir.join("report.json"), to_json(&report))?;
        Ok(report)
    }

    /// Ids of every run under the output directory, sorted.
    pub fn run_ids(&self) -> Result<Vec<String>, PipelineError> {
        let runs = self.out.join("runs");
        if !runs.exists() {
            return Ok(Vec::new());
        }
        let mut ids: Vec<String> = fs::read_dir(&runs)
            .map_err(io_err(&runs))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("run.json").exists())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// `report`: comparison table over `run_ids` (every run when empty) and
    /// forecast plots over the test range and each peak window.
    pub fn report(&self, run_ids: &[String]) -> Result<ComparisonReport, PipelineError> {
        let ids = if run_ids.is_empty() { self.run_ids()? } else { run_ids.to_vec() };
        if ids.is_empty() {
            return Err(PipelineError::input("no runs to report on".into()));
        }
        let dir = self.out.join("report");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut rows = Vec::new();
        let mut files = vec!["comparison.csv".to_string(), "comparison.txt".to_string()];
        for id in &ids {
            let record = self.load_record(id)?;
            rows.push(ComparisonRow { label: record.run_id.clone(), metrics: record.metrics.test });
            let (at, actual, predicted) = read_predictions(&self.run_dir(id).join("predictions.csv"))?;
            let name = format!("forecast_{id}.svg");
            write_file(
                &dir.join(&name),
                plot::forecast_svg(&format!("{id}: test range"), &at, &actual, &predicted, FORECAST_POINTS),
            )?;
            files.push(name);
            for w in &self.config.split.peak_windows {
                let range = w.range();
                let keep: Vec<usize> = (0..at.len()).filter(|&i| range.contains(at[i])).collect();
                if keep.is_empty() {
                    continue;
                }
                let pick = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
                let stamps: Vec<Timestamp> = keep.iter().map(|&i| at[i]).collect();
                let name = format!("forecast_{id}_{}.svg", w.name);
                write_file(
                    &dir.join(&name),
                    plot::forecast_svg(&format!("{id}: {}", w.name), &stamps, &pick(&actual), &pick(&predicted), FORECAST_POINTS),
                )?;
                files.push(name);
            }
        }
        write_file(&dir.join("comparison.csv"), comparison_csv(&rows))?;
        write_file(&dir.join("comparison.txt"), comparison_text(&rows))?;
        Ok(ComparisonReport { rows, files })
    }
}

/// Up to `cap` evenly spaced entries of `idx`.
fn evenly(idx: &[usize], cap: usize) -> Vec<usize> {
    if idx.len() <= cap {
        return idx.to_vec();
    }
    (0..cap).map(|k| idx[k * idx.len() / cap]).collect()
}

/// `specs` without feature `name`. A feature other specs are built from is
/// hidden instead of removed.
fn without(specs: &[FeatureSpec], name: &str) -> Vec<FeatureSpec> {
    let used = specs.iter().any(|s| s.name != name && s.operands().contains(&name));
    specs
        .iter()
        .filter(|s| used || s.name != name)
        .cloned()
        .map(|mut s| {
            if s.name == name {
                s.emit = false;
            }
            s
        })
        .collect()
}

fn predictions_csv(at: &[Timestamp], actual: &[f64], predicted: &[f64]) -> String {
    let mut s = String::from("timestamp,actual,predicted\n");
    for ((t, a), p) in at.iter().zip(actual).zip(predicted) {
        let _ = writeln!(s, "{t},{a},{p}");
    }
    s
}

fn read_predictions(path: &Path) -> Result<(Vec<Timestamp>, Vec<f64>, Vec<f64>), PipelineError> {
    let text = read_file(path)?;
    let bad = |line: usize| PipelineError::runtime(format!("{}, line {}: malformed row", path.display(), line + 1));
    let (mut at, mut actual, mut predicted) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate().skip(1) {
        let mut parts = line.split(',');
        let (Some(t), Some(a), Some(p)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad(i));
        };
        at.push(t.parse::<Timestamp>().map_err(|_| bad(i))?);
        actual.push(a.parse::<f64>().map_err(|_| bad(i))?);
        predicted.push(p.parse::<f64>().map_err(|_| bad(i))?);
    }
    Ok((at, actual, predicted))
}

fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("feature,rank,full,ablated,delta\n");
    for r in rows {
        let rank = r.rank.map(|k| (k + 1).to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{rank},{},{},{}", r.feature, r.full, r.ablated, r.delta);
    }
    s
}

fn refine_text(report: &RefineReport, rows: &[ComparisonRow]) -> String {
    let rank = |r: Option<usize>| r.map(|k| (k + 1).to_string()).unwrap_or_else(|| "-".into());
    let mut s = String::new();
    let _ = writeln!(s, "metric: {:?}", report.metric);
    let _ = writeln!(s, "split: {}", &report.split_hash[..12]);
    let _ = writeln!(s, "\n{}", comparison_text(rows));
    let _ = writeln!(s, "importance ranks (1 = most important)");
    let _ = writeln!(s, "{:<28} {:>8} {:>8} {:>8} {:>8}", "feature", "glob.bef", "glob.aft", "peak.bef", "peak.aft");
    let mut changes = report.rank_changes.clone();
    changes.sort_by_key(|c| (c.after_global.unwrap_or(usize::MAX), c.feature.clone()));
    for c in &changes {
        let _ = writeln!(
            s,
            "{:<28} {:>8} {:>8} {:>8} {:>8}",
            c.feature,
            rank(c.before_global),
            rank(c.after_global),
            rank(c.before_peak),
            rank(c.after_peak)
        );
    }
    if !report.ablation.is_empty() {
        let _ = writeln!(s, "\nablation ({:?} without the feature minus with it)", report.metric);
        for a in &report.ablation {
            let _ = writeln!(s, "{:<28} {:>+10.4}", a.feature, a.delta);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_parsing() {
        assert_eq!("global".parse::<Scope>().unwrap(), Scope::Global);
        assert_eq!("window:summer".parse::<Scope>().unwrap(), Scope::Window("summer".into()));
        assert!("window:".parse::<Scope>().is_err());
        assert!("peaks".parse::<Scope>().is_err());
    }

    #[test]
    fn evenly_spaced() {
        let idx: Vec<usize> = (0..10).collect();
        assert_eq!(evenly(&idx, 20), idx);
        assert_eq!(evenly(&idx, 5), vec![0, 2, 4, 6, 8]);
    }

    #[test]
    fn ablation_hides_operands() {
        let specs = vec![
            FeatureSpec::weather("tavg", "tavg"),
            FeatureSpec::weather("tmax", "tmax"),
            FeatureSpec::interaction("t_x", "tavg", "tmax"),
        ];
        let a = without(&specs, "tavg");
        assert_eq!(a.len(), 3);
        assert!(!a[0].emit);
        let b = without(&specs, "t_x");
        assert_eq!(b.len(), 2);
    }
}
