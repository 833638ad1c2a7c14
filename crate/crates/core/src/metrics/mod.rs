//! Regression metrics, nDCG@K and t-tests.

mod ranking;
mod regression;
mod significance;

use thiserror::Error;

pub use ranking::{ndcg_at_k, query_ndcg, Gain, NdcgOptions, PaneScore, QueryPanes, RankedPaneList, ZeroQueries};
pub use regression::{per_sample_losses, regression_scores, LossKind, RegressionScores};
pub use significance::{group_comparison, significance, Degeneracy, SignificanceResult, TestKind};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} labels vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("k must be at least 1")]
    InvalidK,
}
