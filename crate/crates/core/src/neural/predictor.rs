//! [`Predictor`] wrappers for the sequence regressors.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::encoder::{EncoderRegressor, EncoderSpec, HeadConfig};
use super::recurrent::{RecurrentConfig, RecurrentRegressor};
use super::train::{predict, train, TrainConfig, TrainReport};
use super::NeuralError;
use crate::corpus::ClarificationRecord;
use crate::featurize::{compose_input, InputSetting, WordTokenizer, WordTokenizerOptions};
use crate::predictors::{ModelCheckpoint, Params, Predictor, PredictorError};

fn fit_tokenizer(
    records: &[ClarificationRecord],
    setting: InputSetting,
    max_results: usize,
    options: &WordTokenizerOptions,
) -> Result<WordTokenizer, PredictorError> {
    let inputs = records
        .iter()
        .map(|r| compose_input(r, setting, max_results))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(WordTokenizer::fit_inputs(&inputs, options))
}

/// Hex SHA-256 of the tokenizer's word list.
pub(crate) fn tokenizer_hash(tokenizer: &WordTokenizer) -> String {
    let mut h = Sha256::new();
    for w in tokenizer.words() {
        h.update(w.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn train_params(p: &mut Params, c: &TrainConfig) {
    p.insert("epochs".into(), c.epochs.into());
    p.insert("learning_rate".into(), c.learning_rate.into());
    p.insert("batch_size".into(), c.batch_size.into());
    p.insert("warmup_fraction".into(), c.warmup_fraction.into());
    p.insert("weight_decay".into(), c.weight_decay.into());
    p.insert("max_grad_norm".into(), c.max_grad_norm.into());
}

fn check_hash(ck: &ModelCheckpoint, tokenizer: Option<&WordTokenizer>) -> Result<(), PredictorError> {
    if let (Some(t), Some(h)) = (tokenizer, &ck.vocab_hash) {
        if &tokenizer_hash(t) != h {
            return Err(PredictorError::Checkpoint("tokenizer hash mismatch".into()));
        }
    }
    Ok(())
}

/// Transformer encoder with a regression head, trained from its initialisation on the
/// training records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElbertPredictor {
    setting: InputSetting,
    max_results: usize,
    spec: EncoderSpec,
    head: HeadConfig,
    train: TrainConfig,
    tokenizer_options: WordTokenizerOptions,
    model: Option<EncoderRegressor>,
    #[serde(skip)]
    report: Option<TrainReport>,
}

impl ElbertPredictor {
    pub fn new(setting: InputSetting, max_results: usize, spec: EncoderSpec, head: HeadConfig, train: TrainConfig) -> Self {
        Self {
            setting,
            max_results,
            spec,
            head,
            train,
            tokenizer_options: WordTokenizerOptions::default(),
            model: None,
            report: None,
        }
    }

    pub fn with_tokenizer_options(mut self, options: WordTokenizerOptions) -> Self {
        self.tokenizer_options = options;
        self
    }

    /// Fits with an optional development set whose loss is logged after every epoch.
    pub fn fit_with_dev(
        &mut self,
        records: &[ClarificationRecord],
        dev: Option<&[ClarificationRecord]>,
        seed: u64,
    ) -> Result<&TrainReport, PredictorError> {
        if records.is_empty() {
            return Err(PredictorError::EmptyTraining);
        }
        let tokenizer = fit_tokenizer(records, self.setting, self.max_results, &self.tokenizer_options)?;
        let mut model = EncoderRegressor::build(self.setting, self.max_results, &self.spec, &self.head, tokenizer, seed)?;
        self.train.seed = seed;
        let report = train(&mut model, records, &self.train, dev)?;
        self.model = Some(model);
        Ok(self.report.insert(report))
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self, PredictorError> {
        let p: Self = ck.weights_as()?;
        check_hash(ck, p.model.as_ref().map(EncoderRegressor::tokenizer))?;
        Ok(p)
    }

    pub fn model(&self) -> Option<&EncoderRegressor> {
        self.model.as_ref()
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train
    }

    /// Report of the most recent fit in this process.
    pub fn last_report(&self) -> Option<&TrainReport> {
        self.report.as_ref()
    }
}

impl Predictor for ElbertPredictor {
    fn name(&self) -> &str {
        "elbert"
    }

    fn fit(&mut self, train: &[ClarificationRecord], seed: u64) -> Result<(), PredictorError> {
        self.fit_with_dev(train, None, seed).map(|_| ())
    }

    fn predict(&self, records: &[ClarificationRecord]) -> Result<Vec<f64>, PredictorError> {
        let model = self.model.as_ref().ok_or_else(|| PredictorError::NotFitted(self.name().into()))?;
        Ok(predict(model, records)?)
    }

    fn is_fitted(&self) -> bool {
        self.model.is_some()
    }

    fn hyperparameters(&self) -> Params {
        let mut p = Params::new();
        p.insert("encoder".into(), self.spec.id().into());
        if let Some(h) = self.head.hidden {
            p.insert("head_hidden".into(), h.into());
        }
        p.insert("head_dropout".into(), self.head.dropout.into());
        train_params(&mut p, &self.train);
        p
    }

    fn checkpoint(&self) -> Result<ModelCheckpoint, PredictorError> {
        let hash = self.model.as_ref().map(|m| tokenizer_hash(m.tokenizer()));
        ModelCheckpoint::new(self.name(), self.hyperparameters(), hash, self)
    }
}

/// Bidirectional LSTM over static word vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiLstmPredictor {
    setting: InputSetting,
    max_results: usize,
    config: RecurrentConfig,
    train: TrainConfig,
    tokenizer_options: WordTokenizerOptions,
    model: Option<RecurrentRegressor>,
    #[serde(skip)]
    report: Option<TrainReport>,
}

impl BiLstmPredictor {
    pub fn new(setting: InputSetting, max_results: usize, config: RecurrentConfig, train: TrainConfig) -> Self {
        Self {
            setting,
            max_results,
            config,
            train,
            tokenizer_options: WordTokenizerOptions::default(),
            model: None,
            report: None,
        }
    }

    pub fn with_tokenizer_options(mut self, options: WordTokenizerOptions) -> Self {
        self.tokenizer_options = options;
        self
    }

    pub fn fit_with_dev(
        &mut self,
        records: &[ClarificationRecord],
        dev: Option<&[ClarificationRecord]>,
        seed: u64,
    ) -> Result<&TrainReport, PredictorError> {
        if records.is_empty() {
            return Err(PredictorError::EmptyTraining);
        }
        let tokenizer = fit_tokenizer(records, self.setting, self.max_results, &self.tokenizer_options)?;
        let mut model = RecurrentRegressor::build(self.setting, self.max_results, &self.config, tokenizer, seed)?;
        self.train.seed = seed;
        let report = train(&mut model, records, &self.train, dev)?;
        self.model = Some(model);
        Ok(self.report.insert(report))
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self, PredictorError> {
        let p: Self = ck.weights_as()?;
        check_hash(ck, p.model.as_ref().map(RecurrentRegressor::tokenizer))?;
        Ok(p)
    }

    pub fn model(&self) -> Option<&RecurrentRegressor> {
        self.model.as_ref()
    }

    pub fn last_report(&self) -> Option<&TrainReport> {
        self.report.as_ref()
    }
}

impl Predictor for BiLstmPredictor {
    fn name(&self) -> &str {
        "bilstm"
    }

    fn fit(&mut self, train: &[ClarificationRecord], seed: u64) -> Result<(), PredictorError> {
        self.fit_with_dev(train, None, seed).map(|_| ())
    }

    fn predict(&self, records: &[ClarificationRecord]) -> Result<Vec<f64>, PredictorError> {
        let model = self.model.as_ref().ok_or_else(|| PredictorError::NotFitted(self.name().into()))?;
        Ok(predict(model, records)?)
    }

    fn is_fitted(&self) -> bool {
        self.model.is_some()
    }

    fn hyperparameters(&self) -> Params {
        let mut p = Params::new();
        p.insert("layers".into(), self.config.layers.into());
        p.insert("hidden".into(), self.config.hidden.into());
        p.insert("dropout".into(), self.config.dropout.into());
        train_params(&mut p, &self.train);
        p
    }

    fn checkpoint(&self) -> Result<ModelCheckpoint, PredictorError> {
        let hash = self.model.as_ref().map(|m| tokenizer_hash(m.tokenizer()));
        ModelCheckpoint::new(self.name(), self.hyperparameters(), hash, self)
    }
}

impl From<NeuralError> for PredictorError {
    fn from(e: NeuralError) -> Self {
        PredictorError::Neural(e)
    }
}
