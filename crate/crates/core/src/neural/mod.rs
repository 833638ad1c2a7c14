//! Sequence regressors trained from scratch on CPU: a compact transformer encoder with a
//! two-layer regression head on the first position, and a bidirectional LSTM over static
//! word embeddings. Both share the training loop in [`train`].

pub mod autograd;
mod encoder;
mod predictor;
mod recurrent;
mod train;

use std::path::PathBuf;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::ClarificationRecord;
use crate::featurize::{FeaturizeError, InputSetting};
use autograd::{NodeId, ParamId, ParamStore, Tape};

pub use encoder::{EncoderConfig, EncoderRegressor, EncoderSpec, HeadActivation, HeadConfig};
pub use predictor::{BiLstmPredictor, ElbertPredictor};
pub use recurrent::{EmbeddingSpec, RecurrentConfig, RecurrentRegressor};
pub use train::{learning_rate, predict, train, warmup_steps, EpochReport, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("encoder unavailable: {0}")]
    EncoderUnavailable(String),
    #[error("embedding table unavailable: {0}")]
    EmbeddingUnavailable(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss { epoch: usize, step: usize, detail: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no training data")]
    EmptyTraining,
    #[error(transparent)]
    Featurize(#[from] FeaturizeError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A model that maps one record to one scalar through a recorded forward pass.
pub trait SequenceRegressor: Send + Sync {
    type Input: Send + Sync;

    fn setting(&self) -> InputSetting;

    /// Composes and tokenises `record`.
    fn prepare(&self, record: &ClarificationRecord) -> Result<Self::Input, NeuralError>;

    /// Records the forward pass and returns the `1 × 1` output node. Dropout is active iff
    /// `dropout` is given.
    fn forward(&self, tape: &mut Tape<'_>, input: &Self::Input, dropout: Option<&mut ChaCha8Rng>) -> NodeId;

    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// Bias of the final scalar output.
    fn output_bias(&self) -> ParamId;

    /// Frozen `1 × 1` multiplier applied to the output before the bias.
    fn output_scale(&self) -> ParamId;
}
