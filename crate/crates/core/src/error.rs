use thiserror::Error;

use crate::corpus::CorpusError;
use crate::experiments::ExperimentError;
use crate::featurize::FeaturizeError;
use crate::metrics::MetricsError;
use crate::neural::NeuralError;
use crate::predictors::PredictorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error wrapping every module error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Featurize(#[from] FeaturizeError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

impl Error {
    /// True when the root cause is an empty corpus (after ingestion or filtering).
    pub fn is_empty_corpus(&self) -> bool {
        match self {
            Error::Corpus(CorpusError::EmptyCorpus) => true,
            Error::Experiment(ExperimentError::Corpus(CorpusError::EmptyCorpus)) => true,
            _ => false,
        }
    }
}
