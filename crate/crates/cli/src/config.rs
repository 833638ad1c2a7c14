//! The TOML run configuration.
//!
//! Every table is optional and every field has a default, but unknown keys are rejected so a
//! typo never silently falls back to a default. Command-line flags override file values.

use std::path::{Path, PathBuf};

use anyhow::Context;
use elp_core::corpus::{ColumnMapping, MAX_RESULTS};
use elp_core::experiments::{
    BucketAxis, BucketOptions, Dataset, ExperimentSpec, ModelRecipe, RerankOptions, SweepOptions, SyntheticSpec,
};
use elp_core::featurize::InputSetting;
use serde::{Deserialize, Serialize};

use crate::exit::{config_error, Failure};
use crate::manifest::RunManifest;

/// Where the corpus of a run comes from. Exactly one of `cache`, `click_log` or `synthetic`
/// may be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// A corpus cache written by `ingest` or `synth`.
    pub cache: Option<PathBuf>,
    pub click_log: Option<PathBuf>,
    pub serp_dump: Option<PathBuf>,
    pub columns: ColumnMapping,
    /// Join SERPs to queries case-insensitively.
    pub case_fold_join: bool,
    /// Generate the corpus instead of reading one.
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub axes: Vec<BucketAxis>,
    pub options: BucketOptions,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            axes: vec![
                BucketAxis::Impression,
                BucketAxis::QueryLength,
                BucketAxis::Coverage,
                BucketAxis::Diversity,
            ],
            options: BucketOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankConfig {
    /// Fraction of multi-pane queries held out for ranking.
    pub test_fraction: f64,
    pub options: RerankOptions,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            options: RerankOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub out: Option<PathBuf>,
    /// Split and training seed unless the experiment table sets its own.
    pub seed: u64,
    pub dataset: Dataset,
    pub setting: InputSetting,
    pub max_results: usize,
    pub test_fraction: f64,
    /// The model of `train`, `analyze`, `rerank` and the sweep.
    pub model: ModelRecipe,
    /// Full spec for `evaluate` and `ablate`. Built from the fields above when absent.
    pub experiment: Option<ExperimentSpec>,
    /// When present, `ablate` also sweeps the number of results.
    pub sweep: Option<SweepOptions>,
    pub analysis: AnalysisConfig,
    pub rerank: RerankConfig,
    pub synth: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            out: None,
            seed: 0,
            dataset: Dataset::Full,
            setting: InputSetting::QueryPane,
            max_results: MAX_RESULTS,
            test_fraction: 0.2,
            model: ModelRecipe::default(),
            experiment: None,
            sweep: None,
            analysis: AnalysisConfig::default(),
            rerank: RerankConfig::default(),
            synth: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML config, or the config snapshot of a `manifest.json`.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .map_err(Failure::input)?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: RunManifest = serde_json::from_str(&text)
                .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            return Ok(manifest.config);
        }
        toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
    }

    /// The comparison/ablation spec: `experiment` if given (with `roster` filling an empty
    /// roster), otherwise one built from the top-level fields with `settings` as the setting
    /// list.
    pub fn experiment_spec(&self, settings: Vec<InputSetting>, roster: Vec<ModelRecipe>) -> ExperimentSpec {
        if let Some(e) = &self.experiment {
            let mut e = e.clone();
            if e.roster.is_empty() {
                e.roster = roster;
            }
            return e;
        }
        ExperimentSpec {
            datasets: vec![self.dataset],
            roster,
            settings,
            max_results: self.max_results,
            test_fraction: self.test_fraction,
            split_seed: self.seed,
            train_seeds: vec![self.seed],
            ..Default::default()
        }
    }

    /// Checks values and that every referenced path exists.
    pub fn validate(&self) -> Result<(), Failure> {
        let c = &self.corpus;
        let sources = [c.cache.is_some(), c.click_log.is_some(), c.synthetic.is_some()];
        if sources.iter().filter(|&&s| s).count() > 1 {
            return Err(config_error("corpus: set only one of `cache`, `click_log` and `synthetic`"));
        }
        if c.serp_dump.is_some() && c.click_log.is_none() {
            return Err(config_error("corpus.serp_dump: requires corpus.click_log"));
        }
        for (key, p) in [("corpus.cache", &c.cache), ("corpus.click_log", &c.click_log), ("corpus.serp_dump", &c.serp_dump)] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(config_error(format!("{key}: path {} does not exist", p.display())));
                }
            }
        }
        if let Some(s) = &c.synthetic {
            s.validate().map_err(|e| config_error(format!("corpus.synthetic: {e}")))?;
        }
        if self.max_results > MAX_RESULTS {
            return Err(config_error(format!("max_results: must be at most {MAX_RESULTS}")));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(config_error("test_fraction: must be in (0, 1)"));
        }
        self.model.validate().map_err(|e| config_error(format!("model: {e}")))?;
        if self.experiment.is_some() {
            self.experiment_spec(vec![self.setting], vec![self.model.clone()])
                .validate()
                .map_err(|e| config_error(format!("experiment: {e}")))?;
        }
        if !(self.rerank.test_fraction > 0.0 && self.rerank.test_fraction < 1.0) {
            return Err(config_error("rerank.test_fraction: must be in (0, 1)"));
        }
        self.synth.validate().map_err(|e| config_error(format!("synth: {e}")))?;
        Ok(())
    }
}
