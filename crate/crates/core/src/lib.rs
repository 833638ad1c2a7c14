//! Engagement level prediction for web search clarification panes.
//!
//! The crate is organised as a pipeline:
//!
//! * [`corpus`] ingests clarification logs and SERP dumps into an immutable [`corpus::Corpus`].
//! * [`featurize`] composes model inputs under one of six [`featurize::InputSetting`]s and
//!   builds tf-idf vectors and encoder token sequences.
//! * [`predictors`] holds the [`predictors::Predictor`] contract, the central-tendency
//!   baselines and the classical regressors with cross-validated grid search.
//! * [`neural`] implements a small transformer encoder-regressor and a BiLSTM regressor on
//!   top of a reverse-mode autodiff tape.
//! * [`metrics`] provides MAE/MSE/R², nDCG@K and t-tests.
//! * [`experiments`] runs the comparison, ablation, sweep, bucket and re-ranking protocols.

pub mod corpus;
pub mod error;
pub mod experiments;
pub mod featurize;
pub mod metrics;
pub mod neural;
pub mod predictors;

mod hashing;

pub use error::{Error, Result};
