//! The [`Predictor`] contract, central-tendency baselines and classical regressors.
//!
//! Every predictor consumes [`ClarificationRecord`]s. Classical models wrap a feature-space
//! [`Regressor`] in a [`TextRegressor`] that composes inputs, fits a tf-idf vocabulary on the
//! training records only and transforms every record through it.

mod baselines;
mod features;
mod forest;
mod grid;
mod linear;
mod svr;
mod text;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ClarificationRecord;
use crate::featurize::FeaturizeError;

pub use baselines::{MeanBaseline, MedianBaseline, NormalBaseline};
pub use features::{FeatureMatrix, SparseRow};
pub use forest::{RandomForest, RandomForestParams};
pub use grid::{cv_folds, grid_search_cv, Fold, GridSearchResult, ParamGrid, Scoring};
pub use linear::{LinearRegression, LinearRegressionParams};
pub use svr::{Gamma, Kernel, Svr, SvrParams};
pub use text::{Regressor, TextRegressor};

/// Hyperparameters as name → JSON value, ordered by name.
pub type Params = BTreeMap<String, serde_json::Value>;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("no training data")]
    EmptyTraining,
    #[error("predict called before fit on `{0}`")]
    NotFitted(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("empty parameter grid")]
    EmptyGrid,
    #[error("cannot build {folds} folds from {n} training records")]
    TooFewForFolds { folds: usize, n: usize },
    #[error("label/input length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Featurize(#[from] FeaturizeError),
    #[error(transparent)]
    Neural(crate::neural::NeuralError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Other(String),
}

/// Uniform fit/predict contract for every model.
///
/// `predict` before `fit` is an error. After `fit`, `predict` is a pure function of its
/// input records: the same record always receives the same prediction regardless of its
/// position in the batch.
pub trait Predictor: Send + Sync {
    fn name(&self) -> &str;

    fn fit(&mut self, train: &[ClarificationRecord], seed: u64) -> Result<(), PredictorError>;

    fn predict(&self, records: &[ClarificationRecord]) -> Result<Vec<f64>, PredictorError>;

    fn is_fitted(&self) -> bool;

    fn hyperparameters(&self) -> Params;

    /// Serialisable snapshot of the fitted model.
    fn checkpoint(&self) -> Result<ModelCheckpoint, PredictorError>;
}

/// Versioned container for a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub name: String,
    pub hyperparameters: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_hash: Option<String>,
    pub weights: serde_json::Value,
}

impl ModelCheckpoint {
    pub(crate) fn new<T: Serialize>(
        name: &str,
        hyperparameters: Params,
        vocab_hash: Option<String>,
        weights: &T,
    ) -> Result<Self, PredictorError> {
        Ok(Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            name: name.to_string(),
            hyperparameters,
            vocab_hash,
            weights: serde_json::to_value(weights).map_err(|e| PredictorError::Checkpoint(e.to_string()))?,
        })
    }

    pub(crate) fn weights_as<T: serde::de::DeserializeOwned>(&self) -> Result<T, PredictorError> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(PredictorError::Checkpoint(format!(
                "format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                self.format_version
            )));
        }
        serde_json::from_value(self.weights.clone()).map_err(|e| PredictorError::Checkpoint(e.to_string()))
    }
}

pub(crate) fn labels(records: &[ClarificationRecord]) -> Vec<f64> {
    records.iter().map(ClarificationRecord::engagement_f64).collect()
}

pub(crate) fn param_f64(params: &Params, key: &str) -> Result<Option<f64>, PredictorError> {
    match params.get(key) {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| PredictorError::InvalidHyperparameter(format!("`{key}` must be a number, got {v}"))),
    }
}

pub(crate) fn param_usize(params: &Params, key: &str) -> Result<Option<usize>, PredictorError> {
    match params.get(key) {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(|u| Some(u as usize))
            .ok_or_else(|| PredictorError::InvalidHyperparameter(format!("`{key}` must be a non-negative integer, got {v}"))),
    }
}

pub(crate) fn param_str<'a>(params: &'a Params, key: &str) -> Result<Option<&'a str>, PredictorError> {
    match params.get(key) {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(v) => v
            .as_str()
            .map(Some)
            .ok_or_else(|| PredictorError::InvalidHyperparameter(format!("`{key}` must be a string, got {v}"))),
    }
}

/// Rejects keys outside `allowed`.
pub(crate) fn check_keys(params: &Params, allowed: &[&str]) -> Result<(), PredictorError> {
    match params.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(PredictorError::InvalidHyperparameter(format!(
            "unknown hyperparameter `{k}` (expected one of {allowed:?})"
        ))),
        None => Ok(()),
    }
}
