//! Central-tendency baselines: training mean, training median and normal sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{labels, ModelCheckpoint, Params, Predictor, PredictorError};
use crate::corpus::{records_hash, ClarificationRecord};

fn constant_predictions(value: Option<f64>, name: &str, n: usize) -> Result<Vec<f64>, PredictorError> {
    let v = value.ok_or_else(|| PredictorError::NotFitted(name.to_string()))?;
    Ok(vec![v; n])
}

/// Predicts the training-label mean.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MeanBaseline {
    value: Option<f64>,
}

impl MeanBaseline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self) -> Option<f64> {
        self.value
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self, PredictorError> {
        ck.weights_as()
    }
}

impl Predictor for MeanBaseline {
    fn name(&self) -> &str {
        "mean"
    }

    fn fit(&mut self, train: &[ClarificationRecord], _seed: u64) -> Result<(), PredictorError> {
        if train.is_empty() {
            return Err(PredictorError::EmptyTraining);
        }
        let y = labels(train);
        self.value = Some(y.iter().sum::<f64>() / y.len() as f64);
        Ok(())
    }

    fn predict(&self, records: &[ClarificationRecord]) -> Result<Vec<f64>, PredictorError> {
        constant_predictions(self.value, self.name(), records.len())
    }

    fn is_fitted(&self) -> bool {
        self.value.is_some()
    }

    fn hyperparameters(&self) -> Params {
        Params::new()
    }

    fn checkpoint(&self) -> Result<ModelCheckpoint, PredictorError> {
        ModelCheckpoint::new(self.name(), self.hyperparameters(), None, self)
    }
}

/// Median of a non-empty sample; even counts average the two central order statistics.
pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Predicts the training-label median.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MedianBaseline {
    value: Option<f64>,
}

impl MedianBaseline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self) -> Option<f64> {
        self.value
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self, PredictorError> {
        ck.weights_as()
    }
}

impl Predictor for MedianBaseline {
    fn name(&self) -> &str {
        "median"
    }

    fn fit(&mut self, train: &[ClarificationRecord], _seed: u64) -> Result<(), PredictorError> {
        if train.is_empty() {
            return Err(PredictorError::EmptyTraining);
        }
        self.value = Some(median(&labels(train)));
        Ok(())
    }

    fn predict(&self, records: &[ClarificationRecord]) -> Result<Vec<f64>, PredictorError> {
        constant_predictions(self.value, self.name(), records.len())
    }

    fn is_fitted(&self) -> bool {
        self.value.is_some()
    }

    fn hyperparameters(&self) -> Params {
        Params::new()
    }

    fn checkpoint(&self) -> Result<ModelCheckpoint, PredictorError> {
        ModelCheckpoint::new(self.name(), self.hyperparameters(), None, self)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct NormalFit {
    mean: f64,
    std: f64,
    seed: u64,
}

/// Draws each prediction from N(μ, σ²) with the training mean and (population) standard
/// deviation. Draws are not clipped.
///
/// The draw for a record is seeded by the fit seed and the record's content, so predictions
/// are reproducible and independent of batch order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NormalBaseline {
    fit: Option<NormalFit>,
}

impl NormalBaseline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mean_std(&self) -> Option<(f64, f64)> {
        self.fit.map(|f| (f.mean, f.std))
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self, PredictorError> {
        ck.weights_as()
    }
}

impl Predictor for NormalBaseline {
    fn name(&self) -> &str {
        "normal"
    }

    fn fit(&mut self, train: &[ClarificationRecord], seed: u64) -> Result<(), PredictorError> {
        if train.len() < 2 {
            return Err(PredictorError::EmptyTraining);
        }
        let y = labels(train);
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        self.fit = Some(NormalFit { mean, std, seed });
        Ok(())
    }

    fn predict(&self, records: &[ClarificationRecord]) -> Result<Vec<f64>, PredictorError> {
        let fit = self.fit.ok_or_else(|| PredictorError::NotFitted(self.name().to_string()))?;
        if fit.std == 0.0 {
            return Ok(vec![fit.mean; records.len()]);
        }
        let dist = Normal::new(fit.mean, fit.std).map_err(|e| PredictorError::Other(e.to_string()))?;
        Ok(records
            .iter()
            .map(|r| {
                let h = records_hash(std::slice::from_ref(r));
                let key = u64::from_str_radix(&h[..16], 16).expect("hex digest");
                let mut rng = ChaCha8Rng::seed_from_u64(fit.seed ^ key);
                dist.sample(&mut rng)
            })
            .collect())
    }

    fn is_fitted(&self) -> bool {
        self.fit.is_some()
    }

    fn hyperparameters(&self) -> Params {
        Params::new()
    }

    fn checkpoint(&self) -> Result<ModelCheckpoint, PredictorError> {
        ModelCheckpoint::new(self.name(), self.hyperparameters(), None, self)
    }
}
