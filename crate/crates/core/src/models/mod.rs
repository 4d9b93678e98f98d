//! The three model families behind one artifact type.

pub mod gbdt;
pub mod linear;
pub mod lstm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::time::Timestamp;

pub use gbdt::{fit_gbdt, GbdtParams, Growth, TreeEnsemble, TreeNode};
pub use linear::{fit_ols, LinearModel};
pub use lstm::{fit_lstm, Direction, LstmModel, LstmParams, LstmWeights};

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature matrix has no rows")]
    EmptyMatrix,
    #[error("invalid hyperparameters: {0}")]
    InvalidParams(String),
    #[error("feature schema mismatch: missing {missing:?}, extra {extra:?}")]
    SchemaMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("need at least {window} rows to form one window, have {rows}")]
    TooFewRows { window: usize, rows: usize },
    #[error("training loss became nonfinite at epoch {epoch}, batch {batch}")]
    NonfiniteLoss { epoch: usize, batch: usize },
    #[error("{0}")]
    Unsupported(String),
    #[error("unsupported artifact format version {0}")]
    UnsupportedVersion(u32),
    #[error("artifact i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("artifact json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    Gbdt,
    Lstm,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Gbdt => "gbdt",
            Family::Lstm => "lstm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "model", rename_all = "snake_case")]
pub enum ModelPayload {
    Linear(LinearModel),
    Gbdt(TreeEnsemble),
    Lstm(LstmModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub hyperparameters: serde_json::Value,
    pub train_start: Timestamp,
    pub train_end: Timestamp,
    pub train_rows: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub feature_schema: Vec<String>,
    pub payload: ModelPayload,
    pub training_meta: TrainingMeta,
}

impl ModelArtifact {
    pub fn new(payload: ModelPayload, feature_schema: Vec<String>, training_meta: TrainingMeta) -> Self {
        ModelArtifact { format_version: ARTIFACT_FORMAT_VERSION, feature_schema, payload, training_meta }
    }

    pub fn family(&self) -> Family {
        match self.payload {
            ModelPayload::Linear(_) => Family::Linear,
            ModelPayload::Gbdt(_) => Family::Gbdt,
            ModelPayload::Lstm(_) => Family::Lstm,
        }
    }

    pub fn check_schema(&self, names: &[String]) -> Result<(), ModelError> {
        if names == self.feature_schema.as_slice() {
            return Ok(());
        }
        let missing: Vec<String> = self.feature_schema.iter().filter(|n| !names.contains(n)).cloned().collect();
        let extra: Vec<String> = names.iter().filter(|n| !self.feature_schema.contains(n)).cloned().collect();
        // Same set in a different order still counts as a mismatch; report it
        // as every column misplaced.
        if missing.is_empty() && extra.is_empty() {
            return Err(ModelError::SchemaMismatch { missing: self.feature_schema.clone(), extra: names.to_vec() });
        }
        Err(ModelError::SchemaMismatch { missing, extra })
    }

    /// Prediction for every row of `x`. Recurrent models read each row's
    /// trailing window from `x` itself.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>, ModelError> {
        self.check_schema(&x.names)?;
        Ok(match &self.payload {
            ModelPayload::Linear(m) => x.rows().iter().map(|r| m.predict_row(r)).collect(),
            ModelPayload::Gbdt(e) => x.rows().iter().map(|r| e.predict_row(r)).collect(),
            ModelPayload::Lstm(m) => m.predict_matrix(x),
        })
    }

    /// Row-wise prediction; only defined for models without temporal state.
    pub fn predict_row(&self, row: &[f64]) -> Result<f64, ModelError> {
        if row.len() != self.feature_schema.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "row has {} values, schema has {}",
                row.len(),
                self.feature_schema.len()
            )));
        }
        match &self.payload {
            ModelPayload::Linear(m) => Ok(m.predict_row(row)),
            ModelPayload::Gbdt(e) => Ok(e.predict_row(row)),
            ModelPayload::Lstm(_) => Err(ModelError::Unsupported("recurrent models predict from windows, not rows".into())),
        }
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(ModelError::UnsupportedVersion(header.format_version));
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
