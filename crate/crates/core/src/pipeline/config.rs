//! The TOML run configuration. Unknown keys are rejected at every level and
//! feature references are resolved before any data is read.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::eval::{MetricOptions, SplitSpec};
use crate::explain::MAX_BACKGROUND;
use crate::features::{validate_specs, BuildOptions, FeatureSpec};
use crate::ingest::{DEFAULT_MAX_INTERP_GAP, LOAD_COLUMN, WEATHER_VARIABLES};
use crate::models::{Family, GbdtParams, LstmParams};

fn default_timestamp_column() -> String {
    "timestamp".into()
}

fn default_load_column() -> String {
    LOAD_COLUMN.into()
}

fn default_max_gap() -> usize {
    DEFAULT_MAX_INTERP_GAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSource {
    pub path: PathBuf,
    #[serde(default = "default_timestamp_column")]
    pub timestamp_column: String,
    #[serde(default = "default_load_column")]
    pub value_column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CitySource {
    pub name: String,
    pub path: PathBuf,
    /// Population weight; weights are normalized across cities.
    pub weight: f64,
    #[serde(default = "default_timestamp_column")]
    pub timestamp_column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub load: LoadSource,
    pub cities: Vec<CitySource>,
    #[serde(default = "default_max_gap")]
    pub max_interp_gap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesConfig {
    #[serde(default)]
    pub allow_leakage: bool,
    pub baseline: Vec<FeatureSpec>,
    /// Added to the baseline to form the refined set.
    #[serde(default)]
    pub refined: Vec<FeatureSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    #[serde(default)]
    pub gbdt: GbdtParams,
    #[serde(default)]
    pub lstm: LstmParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainMethod {
    /// Tree paths for boosted trees; enumeration for small linear models,
    /// sampling otherwise.
    Auto,
    Tree,
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSource {
    Test,
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    pub method: ExplainMethod,
    /// Background rows drawn from the train range, stratified by hour.
    pub background: usize,
    /// Cap on explained rows for the global and window scopes.
    pub max_rows: usize,
    pub rows: RowSource,
    pub permutations: usize,
    /// Feature count up to which `auto` enumerates subsets for linear models.
    pub exact_limit: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            method: ExplainMethod::Auto,
            background: crate::explain::DEFAULT_BACKGROUND,
            max_rows: 500,
            rows: RowSource::Test,
            permutations: 256,
            exact_limit: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMetric {
    Mae,
    Rmse,
    Mape,
    PeakMape,
}

impl TargetMetric {
    pub fn of(self, m: &crate::eval::MetricSet) -> f64 {
        match self {
            TargetMetric::Mae => m.mae,
            TargetMetric::Rmse => m.rmse,
            TargetMetric::Mape => m.mape,
            TargetMetric::PeakMape => m.peak_mape,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    /// Refined features to inject; defaults to every emitted refined feature.
    #[serde(default)]
    pub candidates: Option<Vec<String>>,
    /// Features to drop one at a time; defaults to the candidates.
    #[serde(default)]
    pub ablation: Option<Vec<String>>,
    #[serde(default = "default_metric")]
    pub metric: TargetMetric,
}

fn default_metric() -> TargetMetric {
    TargetMetric::PeakMape
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig { candidates: None, ablation: None, metric: default_metric() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file; `--out` overrides it.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub features: FeaturesConfig,
    pub model: ModelConfig,
    pub split: SplitSpec,
    #[serde(default)]
    pub explain: ExplainConfig,
    #[serde(default)]
    pub refine: RefineConfig,
    #[serde(default)]
    pub eval: MetricOptions,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl PipelineConfig {
    /// Parses and validates.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let config = Self::parse_unchecked(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Parses without validating, so that command-line overrides can be
    /// applied first.
    pub fn parse_unchecked(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::input(format!("invalid config: {e}")))
    }

    /// Reads and parses `path`; validation is left to the caller.
    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_unchecked(&text)
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions { allow_leakage: self.features.allow_leakage }
    }

    pub fn dataset_columns() -> Vec<String> {
        std::iter::once(LOAD_COLUMN).chain(WEATHER_VARIABLES).map(String::from).collect()
    }

    pub fn baseline_specs(&self) -> Vec<FeatureSpec> {
        self.features.baseline.clone()
    }

    pub fn refined_specs(&self) -> Vec<FeatureSpec> {
        self.features.baseline.iter().chain(&self.features.refined).cloned().collect()
    }

    /// Emitted names of the refined additions.
    pub fn refined_names(&self) -> Vec<String> {
        self.features.refined.iter().filter(|s| s.emit).map(|s| s.name.clone()).collect()
    }

    pub fn candidates(&self) -> Vec<String> {
        self.refine.candidates.clone().unwrap_or_else(|| self.refined_names())
    }

    pub fn ablation(&self) -> Vec<String> {
        self.refine.ablation.clone().unwrap_or_else(|| self.candidates())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let input = PipelineError::input;
        if self.data.cities.is_empty() {
            return Err(input("config lists no weather cities".into()));
        }
        let mut names = BTreeSet::new();
        for c in &self.data.cities {
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return Err(input(format!("city `{}` has invalid weight {}", c.name, c.weight)));
            }
            if !names.insert(c.name.as_str()) {
                return Err(input(format!("city `{}` listed twice", c.name)));
            }
        }
        if self.data.cities.iter().map(|c| c.weight).sum::<f64>() <= 0.0 {
            return Err(input("city weights sum to zero".into()));
        }
        self.split.validate().map_err(|e| input(e.to_string()))?;
        if !(self.eval.peak_fraction > 0.0 && self.eval.peak_fraction < 1.0) {
            return Err(input(format!("peak_fraction {} outside (0, 1)", self.eval.peak_fraction)));
        }
        if !(self.eval.mape_floor > 0.0) {
            return Err(input("mape_floor must be positive".into()));
        }
        let columns = Self::dataset_columns();
        let options = self.build_options();
        if self.features.baseline.iter().all(|s| !s.emit) {
            return Err(input("the baseline feature set emits no columns".into()));
        }
        validate_specs(&columns, &self.baseline_specs(), options).map_err(|e| input(format!("baseline: {e}")))?;
        validate_specs(&columns, &self.refined_specs(), options).map_err(|e| input(format!("refined: {e}")))?;
        let refined = self.refined_names();
        for (what, list) in [("candidate", &self.refine.candidates), ("ablation", &self.refine.ablation)] {
            for name in list.iter().flatten() {
                if !refined.contains(name) {
                    return Err(input(format!("{what} `{name}` is not an emitted refined feature")));
                }
            }
        }
        if self.explain.background == 0 || self.explain.background > MAX_BACKGROUND {
            return Err(input(format!("explain.background must lie in 1..={MAX_BACKGROUND}")));
        }
        if self.explain.max_rows == 0 || self.explain.permutations == 0 {
            return Err(input("explain.max_rows and explain.permutations must be positive".into()));
        }
        if self.model.family == Family::Gbdt {
            self.model.gbdt.validate().map_err(|e| input(e.to_string()))?;
        }
        Ok(())
    }

    /// Hash of the effective configuration (after command-line overrides).
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn split_hash(&self) -> String {
        sha256_hex(serde_json::to_string(&self.split).expect("split serializes").as_bytes())
    }
}
