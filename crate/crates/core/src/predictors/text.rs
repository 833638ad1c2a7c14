use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::features::FeatureMatrix;
use super::{check_keys, labels, param_usize, ModelCheckpoint, Params, Predictor, PredictorError};
use crate::corpus::ClarificationRecord;
use crate::featurize::{analyze, compose_input, tfidf_fit_on_tokens, InputSetting, Vocabulary, VocabularyOptions};

/// A regressor over sparse feature rows.
pub trait Regressor: Send + Sync + Clone + Serialize + DeserializeOwned {
    const NAME: &'static str;
    /// Hyperparameter names accepted by [`Regressor::from_params`].
    const PARAM_KEYS: &'static [&'static str];

    fn from_params(params: &Params) -> Result<Self, PredictorError>;

    fn fit(&mut self, x: &FeatureMatrix, y: &[f64], seed: u64) -> Result<(), PredictorError>;

    /// Prediction for one row. Only meaningful after a successful fit.
    fn predict_row(&self, row: &[(u32, f64)]) -> f64;

    fn is_fitted(&self) -> bool;

    fn hyperparameters(&self) -> Params;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FittedVocab {
    vocab: Vocabulary,
    hash: String,
}

/// Composes inputs, fits tf-idf on the training records and delegates to a [`Regressor`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "R: Regressor")]
pub struct TextRegressor<R: Regressor> {
    setting: InputSetting,
    max_results: usize,
    vocab_options: VocabularyOptions,
    regressor: R,
    fitted: Option<FittedVocab>,
}

const VOCAB_KEYS: [&str; 2] = ["min_df", "max_features"];

impl<R: Regressor> TextRegressor<R> {
    pub fn new(setting: InputSetting, max_results: usize, vocab_options: VocabularyOptions, regressor: R) -> Self {
        Self {
            setting,
            max_results,
            vocab_options,
            regressor,
            fitted: None,
        }
    }

    /// Builds from a flat parameter map holding vocabulary keys (`min_df`, `max_features`)
    /// and regressor keys.
    pub fn from_params(setting: InputSetting, max_results: usize, params: &Params) -> Result<Self, PredictorError> {
        let allowed: Vec<&str> = VOCAB_KEYS.iter().chain(R::PARAM_KEYS).copied().collect();
        check_keys(params, &allowed)?;
        let mut vocab_options = VocabularyOptions::default();
        if let Some(m) = param_usize(params, "min_df")? {
            if m == 0 {
                return Err(PredictorError::InvalidHyperparameter("min_df must be >= 1".into()));
            }
            vocab_options.min_df = m;
        }
        vocab_options.max_features = param_usize(params, "max_features")?;
        let rest: Params = params
            .iter()
            .filter(|(k, _)| !VOCAB_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(Self::new(setting, max_results, vocab_options, R::from_params(&rest)?))
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self, PredictorError> {
        let model: Self = ck.weights_as()?;
        if let (Some(f), Some(h)) = (&model.fitted, &ck.vocab_hash) {
            if &f.hash != h {
                return Err(PredictorError::Checkpoint("vocabulary hash mismatch".into()));
            }
        }
        Ok(model)
    }

    pub fn setting(&self) -> InputSetting {
        self.setting
    }

    pub fn regressor(&self) -> &R {
        &self.regressor
    }

    pub fn vocabulary(&self) -> Option<&Vocabulary> {
        self.fitted.as_ref().map(|f| &f.vocab)
    }

    fn tokens(&self, record: &ClarificationRecord) -> Result<Vec<String>, PredictorError> {
        let input = compose_input(record, self.setting, self.max_results)?;
        Ok(analyze(&input.full_text(), self.vocab_options.lowercase))
    }
}

impl<R: Regressor> Predictor for TextRegressor<R> {
    fn name(&self) -> &str {
        R::NAME
    }

    fn fit(&mut self, train: &[ClarificationRecord], seed: u64) -> Result<(), PredictorError> {
        if train.is_empty() {
            return Err(PredictorError::EmptyTraining);
        }
        let docs = train
            .par_iter()
            .map(|r| self.tokens(r))
            .collect::<Result<Vec<_>, _>>()?;
        let vocab = tfidf_fit_on_tokens(&docs, &self.vocab_options)?;
        let hash = vocab.content_hash();
        let rows = docs.iter().map(|d| vocab.transform_tokens(d, &hash).entries).collect();
        let x = FeatureMatrix::new(rows, vocab.len());
        let mut regressor = self.regressor.clone();
        regressor.fit(&x, &labels(train), seed)?;
        self.regressor = regressor;
        self.fitted = Some(FittedVocab { vocab, hash });
        Ok(())
    }

    fn predict(&self, records: &[ClarificationRecord]) -> Result<Vec<f64>, PredictorError> {
        let fitted = match (&self.fitted, self.regressor.is_fitted()) {
            (Some(f), true) => f,
            _ => return Err(PredictorError::NotFitted(self.name().to_string())),
        };
        records
            .par_iter()
            .map(|r| {
                let tokens = self.tokens(r)?;
                let bow = fitted.vocab.transform_tokens(&tokens, &fitted.hash);
                Ok(self.regressor.predict_row(&bow.entries))
            })
            .collect()
    }

    fn is_fitted(&self) -> bool {
        self.fitted.is_some() && self.regressor.is_fitted()
    }

    fn hyperparameters(&self) -> Params {
        let mut p = self.regressor.hyperparameters();
        p.insert("min_df".into(), self.vocab_options.min_df.into());
        if let Some(m) = self.vocab_options.max_features {
            p.insert("max_features".into(), m.into());
        }
        p
    }

    fn checkpoint(&self) -> Result<ModelCheckpoint, PredictorError> {
        let hash = self.fitted.as_ref().map(|f| f.hash.clone());
        ModelCheckpoint::new(self.name(), self.hyperparameters(), hash, self)
    }
}
