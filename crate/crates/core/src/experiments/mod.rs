//! End-to-end protocols: the model comparison, the SERP ablation and result-count sweep,
//! bucketed error analyses, pane re-ranking and a synthetic corpus generator.
//!
//! Every runner is a pure function of its spec, its corpus and its seeds. Independent cells
//! run in parallel and are merged in a fixed order, so report tables do not depend on thread
//! scheduling.

mod analysis;
mod comparison;
mod report;
mod rerank;
mod roster;
mod synthetic;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::featurize::FeaturizeError;
use crate::metrics::MetricsError;
use crate::predictors::PredictorError;

pub use analysis::{
    analyze_by_bucket, analyze_by_bucket_with, answer_coverage, stem, unique_noun_ratio, AnalysisBucketReport,
    BucketAxis, BucketOptions, BucketStats, Coverage, GroupComparison, HeuristicTagger, PosTagger,
};
pub use comparison::{
    prepare_dataset, run_ablation, run_main_comparison, sweep_result_count, AblationReport, AblationRow,
    ComparisonReport, ComparisonRow, Dataset, ExperimentSpec, SweepMode, SweepOptions, SweepPoint, SweepReport,
};
pub use report::{fmt_metric, series_tsv, spec_hash, SeriesPoint, Table};
pub use rerank::{
    pane_group_split, rerank_with_scores, run_pane_reranking, RerankOptions, RerankReport, RerankRow,
};
pub use roster::{build_predictor, fit_recipe, FittedModel, ModelKind, ModelRecipe};
pub use synthetic::{filler_word, generate_synthetic, KeywordWeight, PlantedSignal, SyntheticSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Featurize(#[from] FeaturizeError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("the roster is empty")]
    EmptyRoster,
    #[error("no query has two or more panes")]
    NoMultiPaneQueries,
}
