//! Holdout comparisons: the model table, the input-setting ablation and the result-count
//! sweep.
//!
//! All rows of one dataset share one train/test split. When any requested setting reads the
//! SERP, records without one are dropped from the dataset before splitting, for every model
//! and setting alike, and the number dropped is reported.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{fmt_metric, spec_hash, SeriesPoint, Table};
use super::roster::{fit_recipe, ModelKind, ModelRecipe};
use super::ExperimentError;
use crate::corpus::{ClarificationRecord, Corpus, CorpusError, Serp, MAX_RESULTS};
use crate::featurize::InputSetting;
use crate::metrics::{per_sample_losses, regression_scores, significance, LossKind, RegressionScores, SignificanceResult};
use crate::predictors::{labels as labels_of, GridSearchResult, MeanBaseline, MedianBaseline, Predictor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    #[default]
    Full,
    ElOnly,
}

impl Dataset {
    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::Full => "full",
            Dataset::ElOnly => "el-only",
        }
    }

    pub fn apply(self, corpus: &Corpus) -> Result<Corpus, CorpusError> {
        match self {
            Dataset::Full => Ok(corpus.clone()),
            Dataset::ElOnly => corpus.filter_el_only(),
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Dataset::Full),
            "el-only" => Ok(Dataset::ElOnly),
            other => Err(format!("unknown dataset `{other}` (expected full or el-only)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub datasets: Vec<Dataset>,
    pub roster: Vec<ModelRecipe>,
    pub settings: Vec<InputSetting>,
    pub max_results: usize,
    pub test_fraction: f64,
    pub split_seed: u64,
    /// Every model is trained once per seed; scores and per-sample losses are averaged.
    pub train_seeds: Vec<u64>,
    /// Per-sample loss paired in significance tests.
    pub loss: LossKind,
    pub alpha: f64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            datasets: vec![Dataset::Full],
            roster: Vec::new(),
            settings: vec![InputSetting::QueryPane],
            max_results: MAX_RESULTS,
            test_fraction: 0.2,
            split_seed: 0,
            train_seeds: vec![0],
            loss: LossKind::Squared,
            alpha: 0.05,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidSpec(m.to_string()));
        if self.roster.is_empty() {
            return Err(ExperimentError::EmptyRoster);
        }
        if self.settings.is_empty() {
            return bad("settings must not be empty");
        }
        if self.datasets.is_empty() {
            return bad("datasets must not be empty");
        }
        if has_duplicates(&self.settings) || has_duplicates(&self.datasets) {
            return bad("settings and datasets must not repeat");
        }
        if self.train_seeds.is_empty() {
            return bad("train_seeds must not be empty");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must be in (0, 1)");
        }
        if self.max_results > MAX_RESULTS {
            return bad("max_results must be at most 10");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must be in (0, 1)");
        }
        self.roster.iter().try_for_each(ModelRecipe::validate)
    }

    pub fn hash(&self) -> String {
        spec_hash(self)
    }
}

fn has_duplicates<T: Ord>(v: &[T]) -> bool {
    let mut s: Vec<&T> = v.iter().collect();
    s.sort();
    s.windows(2).any(|w| w[0] == w[1])
}

/// Applies the dataset filter, then drops SERP-less records if any setting needs a SERP.
/// Returns the prepared corpus and the number of records dropped for lacking a SERP.
pub fn prepare_dataset(
    corpus: &Corpus,
    dataset: Dataset,
    settings: &[InputSetting],
) -> Result<(Corpus, usize), ExperimentError> {
    let base = dataset.apply(corpus)?;
    if settings.iter().any(|s| s.needs_serp()) {
        let with = base.filter_with_serp()?;
        let dropped = base.len() - with.len();
        if dropped > 0 {
            log::warn!("{dataset}: excluded {dropped} records without a SERP");
        }
        Ok((with, dropped))
    } else {
        Ok((base, 0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub dataset: Dataset,
    pub n_train: usize,
    pub n_test: usize,
    pub excluded_missing_serp: usize,
}

struct Split {
    info: SplitInfo,
    train: Vec<ClarificationRecord>,
    test: Vec<ClarificationRecord>,
}

fn split(
    corpus: &Corpus,
    dataset: Dataset,
    settings: &[InputSetting],
    test_fraction: f64,
    seed: u64,
) -> Result<Split, ExperimentError> {
    let (prepared, excluded) = prepare_dataset(corpus, dataset, settings)?;
    let (train, test) = prepared.holdout_split(test_fraction, seed)?;
    Ok(Split {
        info: SplitInfo {
            dataset,
            n_train: train.len(),
            n_test: test.len(),
            excluded_missing_serp: excluded,
        },
        train: train.into_records(),
        test: test.into_records(),
    })
}

/// Result of one model on one split, averaged over training seeds.
struct Cell {
    scores: RegressionScores,
    per_seed: Vec<RegressionScores>,
    losses: Vec<f64>,
    predictions: Vec<f64>,
    grids: Vec<GridSearchResult>,
}

fn mean_of(rows: &[Vec<f64>]) -> Vec<f64> {
    if rows.len() == 1 {
        return rows[0].clone();
    }
    let n = rows.len() as f64;
    (0..rows[0].len()).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n).collect()
}

fn average_scores(per_seed: &[RegressionScores]) -> RegressionScores {
    if per_seed.len() == 1 {
        return per_seed[0].clone();
    }
    let n = per_seed.len() as f64;
    let avg = |f: fn(&RegressionScores) -> f64| per_seed.iter().map(f).sum::<f64>() / n;
    RegressionScores {
        mae: avg(|s| s.mae),
        mse: avg(|s| s.mse),
        r2: avg(|s| s.r2),
        n: per_seed[0].n,
        r2_undefined: per_seed.iter().find_map(|s| s.r2_undefined.clone()),
    }
}

fn score_predictions(y: &[f64], yhat: Vec<Vec<f64>>, loss: LossKind) -> Result<(Vec<RegressionScores>, Vec<f64>, Vec<f64>), ExperimentError> {
    let per_seed = yhat.iter().map(|p| regression_scores(y, p)).collect::<Result<Vec<_>, _>>()?;
    let losses = yhat.iter().map(|p| per_sample_losses(y, p, loss)).collect::<Result<Vec<_>, _>>()?;
    Ok((per_seed, mean_of(&losses), mean_of(&yhat)))
}

fn run_cell(
    recipe: &ModelRecipe,
    setting: InputSetting,
    max_results: usize,
    split: &Split,
    seeds: &[u64],
    loss: LossKind,
) -> Result<Cell, ExperimentError> {
    let mut preds = Vec::with_capacity(seeds.len());
    let mut grids = Vec::new();
    for &seed in seeds {
        let fitted = fit_recipe(recipe, setting, max_results, &split.train, seed)?;
        preds.push(fitted.model.predict(&split.test)?);
        grids.extend(fitted.grid);
    }
    let y = labels_of(&split.test);
    let (per_seed, losses, predictions) = score_predictions(&y, preds, loss)?;
    Ok(Cell {
        scores: average_scores(&per_seed),
        per_seed,
        losses,
        predictions,
        grids,
    })
}

fn reference_losses(model: &mut dyn Predictor, split: &Split, loss: LossKind) -> Result<Vec<f64>, ExperimentError> {
    model.fit(&split.train, 0)?;
    let p = model.predict(&split.test)?;
    Ok(per_sample_losses(&labels_of(&split.test), &p, loss)?)
}

/// Paired test of `model` against `reference`; the flag says whether the model is
/// significantly better.
fn compare(model: &[f64], reference: &[f64], alpha: f64) -> Result<(SignificanceResult, bool), ExperimentError> {
    let r = significance(model, reference)?;
    let better = r.significant(alpha) && r.mean_a < r.mean_b;
    Ok((r, better))
}

fn p_value(r: &Option<SignificanceResult>) -> String {
    r.as_ref().map_or_else(|| "-".into(), |s| fmt_metric(s.p_value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub dataset: Dataset,
    pub setting: InputSetting,
    pub kind: ModelKind,
    pub model: String,
    /// Averaged over training seeds.
    pub scores: RegressionScores,
    pub per_seed: Vec<RegressionScores>,
    pub vs_mean: Option<SignificanceResult>,
    pub vs_median: Option<SignificanceResult>,
    /// `†` significantly better than the mean baseline, `‡` than the median baseline.
    pub markers: String,
    /// Seed-averaged test predictions in test-split order.
    #[serde(skip)]
    pub predictions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub spec_hash: String,
    pub corpus_hash: String,
    pub splits: Vec<SplitInfo>,
    pub rows: Vec<ComparisonRow>,
    /// `(row index, search)` for every grid search that ran, in row and seed order.
    pub grids: Vec<(usize, GridSearchResult)>,
    #[serde(skip)]
    spec: Option<ExperimentSpec>,
}

fn preamble(t: &mut Table, spec: &ExperimentSpec, spec_hash: &str, corpus_hash: &str, splits: &[SplitInfo]) {
    t.meta("spec_hash", spec_hash).meta("corpus_hash", corpus_hash);
    t.meta("split_seed", spec.split_seed).meta("test_fraction", spec.test_fraction);
    let seeds: Vec<String> = spec.train_seeds.iter().map(u64::to_string).collect();
    t.meta("train_seeds", seeds.join(",")).meta("loss", format!("{:?}", spec.loss).to_lowercase());
    t.meta("alpha", spec.alpha).meta("max_results", spec.max_results);
    for s in splits {
        t.meta(
            &format!("split.{}", s.dataset),
            format!("train={} test={} excluded_missing_serp={}", s.n_train, s.n_test, s.excluded_missing_serp),
        );
    }
}

impl ComparisonReport {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(
            "model comparison",
            &["dataset", "setting", "model", "mae", "mse", "r2", "n_test", "sig", "p_vs_mean", "p_vs_median"],
        );
        if let Some(spec) = &self.spec {
            preamble(&mut t, spec, &self.spec_hash, &self.corpus_hash, &self.splits);
        }
        for r in &self.rows {
            t.push(vec![
                r.dataset.to_string(),
                r.setting.to_string(),
                r.model.clone(),
                fmt_metric(r.scores.mae),
                fmt_metric(r.scores.mse),
                fmt_metric(r.scores.r2),
                r.scores.n.to_string(),
                r.markers.clone(),
                p_value(&r.vs_mean),
                p_value(&r.vs_median),
            ]);
        }
        t
    }

    pub fn row(&self, dataset: Dataset, kind: ModelKind) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.dataset == dataset && r.kind == kind)
    }
}

type CellKey = (usize, usize, usize);

/// Runs every (dataset, setting, recipe) cell. Cells are independent and run in parallel;
/// results come back in key order.
fn run_cells(spec: &ExperimentSpec, splits: &[Split]) -> Result<Vec<(CellKey, Cell)>, ExperimentError> {
    let mut keys = Vec::new();
    for d in 0..splits.len() {
        for s in 0..spec.settings.len() {
            for r in 0..spec.roster.len() {
                keys.push((d, s, r));
            }
        }
    }
    keys.par_iter()
        .map(|&(d, s, r)| {
            let cell = run_cell(
                &spec.roster[r],
                spec.settings[s],
                spec.max_results,
                &splits[d],
                &spec.train_seeds,
                spec.loss,
            )?;
            Ok(((d, s, r), cell))
        })
        .collect()
}

fn make_splits(spec: &ExperimentSpec, corpus: &Corpus) -> Result<Vec<Split>, ExperimentError> {
    spec.datasets
        .iter()
        .map(|&d| split(corpus, d, &spec.settings, spec.test_fraction, spec.split_seed))
        .collect()
}

/// Trains and scores every roster model on each dataset and setting.
///
/// Rows are ordered by dataset, then setting, then model family. Each model's per-sample
/// losses are paired against the mean and median baselines fitted on the same split.
pub fn run_main_comparison(spec: &ExperimentSpec, corpus: &Corpus) -> Result<ComparisonReport, ExperimentError> {
    spec.validate()?;
    let splits = make_splits(spec, corpus)?;
    let refs = splits
        .iter()
        .map(|s| {
            Ok((
                reference_losses(&mut MeanBaseline::new(), s, spec.loss)?,
                reference_losses(&mut MedianBaseline::new(), s, spec.loss)?,
            ))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let mut cells = run_cells(spec, &splits)?;
    cells.sort_by_key(|&((d, s, r), _)| (d, s, spec.roster[r].kind, r));
    let mut rows = Vec::new();
    let mut grids = Vec::new();
    for ((d, s, r), cell) in cells {
        let kind = spec.roster[r].kind;
        let (mean_ref, median_ref) = &refs[d];
        let mut markers = String::new();
        let vs_mean = if kind == ModelKind::Mean {
            None
        } else {
            let (res, better) = compare(&cell.losses, mean_ref, spec.alpha)?;
            if better {
                markers.push('†');
            }
            Some(res)
        };
        let vs_median = if kind == ModelKind::Median {
            None
        } else {
            let (res, better) = compare(&cell.losses, median_ref, spec.alpha)?;
            if better {
                markers.push('‡');
            }
            Some(res)
        };
        grids.extend(cell.grids.into_iter().map(|g| (rows.len(), g)));
        rows.push(ComparisonRow {
            dataset: splits[d].info.dataset,
            setting: spec.settings[s],
            kind,
            model: kind.display_name().to_string(),
            scores: cell.scores,
            per_seed: cell.per_seed,
            vs_mean,
            vs_median,
            markers,
            predictions: cell.predictions,
        });
    }
    Ok(ComparisonReport {
        spec_hash: spec.hash(),
        corpus_hash: corpus.content_hash(),
        splits: splits.into_iter().map(|s| s.info).collect(),
        rows,
        grids,
        spec: Some(spec.clone()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dataset: Dataset,
    pub kind: ModelKind,
    pub model: String,
    pub setting: InputSetting,
    pub scores: RegressionScores,
    pub per_seed: Vec<RegressionScores>,
    pub vs_query: Option<SignificanceResult>,
    pub vs_query_pane: Option<SignificanceResult>,
    /// `†` significantly better than the query-only row, `‡` than the query+pane row.
    pub markers: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub spec_hash: String,
    pub corpus_hash: String,
    pub splits: Vec<SplitInfo>,
    pub rows: Vec<AblationRow>,
    #[serde(skip)]
    spec: Option<ExperimentSpec>,
}

impl AblationReport {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(
            "input setting ablation",
            &["dataset", "model", "setting", "mae", "mse", "r2", "n_test", "sig", "p_vs_query", "p_vs_query_pane"],
        );
        if let Some(spec) = &self.spec {
            preamble(&mut t, spec, &self.spec_hash, &self.corpus_hash, &self.splits);
        }
        for r in &self.rows {
            t.push(vec![
                r.dataset.to_string(),
                r.model.clone(),
                r.setting.to_string(),
                fmt_metric(r.scores.mae),
                fmt_metric(r.scores.mse),
                fmt_metric(r.scores.r2),
                r.scores.n.to_string(),
                r.markers.clone(),
                p_value(&r.vs_query),
                p_value(&r.vs_query_pane),
            ]);
        }
        t
    }

    pub fn row(&self, dataset: Dataset, kind: ModelKind, setting: InputSetting) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.kind == kind && r.setting == setting)
    }
}

/// Trains every roster recipe under every setting.
///
/// Rows are ordered by dataset, then recipe, then setting in spec order. Each row's losses
/// are paired against the query-only and query+pane rows of the same recipe when those
/// settings are part of the spec.
pub fn run_ablation(spec: &ExperimentSpec, corpus: &Corpus) -> Result<AblationReport, ExperimentError> {
    spec.validate()?;
    let splits = make_splits(spec, corpus)?;
    let cells = run_cells(spec, &splits)?;
    let find = |d: usize, r: usize, setting: InputSetting| {
        let s = spec.settings.iter().position(|&x| x == setting)?;
        cells.iter().find(|(k, _)| *k == (d, s, r)).map(|(_, c)| c)
    };
    let mut order: Vec<&(CellKey, Cell)> = cells.iter().collect();
    order.sort_by_key(|((d, s, r), _)| (*d, *r, *s));
    let mut rows = Vec::new();
    for ((d, s, r), cell) in order {
        let setting = spec.settings[*s];
        let kind = spec.roster[*r].kind;
        let mut markers = String::new();
        let mut against = |reference: InputSetting, mark: char| -> Result<Option<SignificanceResult>, ExperimentError> {
            if setting == reference {
                return Ok(None);
            }
            match find(*d, *r, reference) {
                Some(rc) => {
                    let (res, better) = compare(&cell.losses, &rc.losses, spec.alpha)?;
                    if better {
                        markers.push(mark);
                    }
                    Ok(Some(res))
                }
                None => Ok(None),
            }
        };
        let vs_query = against(InputSetting::Query, '†')?;
        let vs_query_pane = against(InputSetting::QueryPane, '‡')?;
        rows.push(AblationRow {
            dataset: splits[*d].info.dataset,
            kind,
            model: kind.display_name().to_string(),
            setting,
            scores: cell.scores.clone(),
            per_seed: cell.per_seed.clone(),
            vs_query,
            vs_query_pane,
            markers,
        });
    }
    Ok(AblationReport {
        spec_hash: spec.hash(),
        corpus_hash: corpus.content_hash(),
        splits: splits.into_iter().map(|s| s.info).collect(),
        rows,
        spec: Some(spec.clone()),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Train a model per count with inputs limited to that many results.
    #[default]
    Retrain,
    /// Train once on all results, then evaluate on test SERPs truncated to each count.
    Recompose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub dataset: Dataset,
    pub settings: Vec<InputSetting>,
    pub counts: Vec<usize>,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub train_seed: u64,
    pub mode: SweepMode,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            dataset: Dataset::Full,
            settings: vec![InputSetting::QueryPaneTitles, InputSetting::QueryPaneSnippets],
            counts: (1..=MAX_RESULTS).collect(),
            test_fraction: 0.2,
            split_seed: 0,
            train_seed: 0,
            mode: SweepMode::Retrain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub setting: InputSetting,
    pub count: usize,
    pub scores: RegressionScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub mode: SweepMode,
    pub split: SplitInfo,
    pub corpus_hash: String,
    pub options_hash: String,
    /// Ordered by setting, then count, as given in the options.
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn r2(&self, setting: InputSetting, count: usize) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.setting == setting && p.count == count)
            .map(|p| p.scores.r2)
    }

    /// `(count, R², setting)` triples.
    pub fn series(&self) -> Vec<SeriesPoint> {
        self.points
            .iter()
            .map(|p| SeriesPoint {
                x: p.count as f64,
                y: p.scores.r2,
                series: p.setting.to_string(),
            })
            .collect()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new("result count sweep", &["setting", "count", "mae", "mse", "r2", "n_test"]);
        t.meta("options_hash", &self.options_hash).meta("corpus_hash", &self.corpus_hash);
        t.meta("mode", format!("{:?}", self.mode).to_lowercase());
        t.meta(
            "split",
            format!(
                "train={} test={} excluded_missing_serp={}",
                self.split.n_train, self.split.n_test, self.split.excluded_missing_serp
            ),
        );
        for p in &self.points {
            t.push(vec![
                p.setting.to_string(),
                p.count.to_string(),
                fmt_metric(p.scores.mae),
                fmt_metric(p.scores.mse),
                fmt_metric(p.scores.r2),
                p.scores.n.to_string(),
            ]);
        }
        t
    }
}

fn truncated(records: &[ClarificationRecord], count: usize) -> Vec<ClarificationRecord> {
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if let Some(s) = &r.serp {
                r.serp = Some(Serp::new(s.results.iter().take(count).cloned().collect()));
            }
            r
        })
        .collect()
}

/// Scores `recipe` with inputs limited to each result count.
///
/// The split and SERP exclusion match [`run_ablation`] with the same dataset, fraction and
/// seeds, so count 10 reproduces the ablation cell of the same setting.
pub fn sweep_result_count(
    recipe: &ModelRecipe,
    corpus: &Corpus,
    options: &SweepOptions,
) -> Result<SweepReport, ExperimentError> {
    recipe.validate()?;
    if options.settings.is_empty() || options.counts.is_empty() {
        return Err(ExperimentError::InvalidSpec("sweep needs settings and counts".into()));
    }
    if let Some(s) = options.settings.iter().find(|s| !s.needs_serp()) {
        return Err(ExperimentError::InvalidSpec(format!("sweep setting `{s}` reads no search results")));
    }
    if let Some(c) = options.counts.iter().find(|&&c| c > MAX_RESULTS) {
        return Err(ExperimentError::InvalidSpec(format!("result count {c} exceeds {MAX_RESULTS}")));
    }
    let sp = split(corpus, options.dataset, &options.settings, options.test_fraction, options.split_seed)?;
    let y = labels_of(&sp.test);
    let seed = options.train_seed;
    let keys: Vec<(InputSetting, usize)> = options
        .settings
        .iter()
        .flat_map(|&s| options.counts.iter().map(move |&c| (s, c)))
        .collect();
    let full_models = match options.mode {
        SweepMode::Retrain => Vec::new(),
        SweepMode::Recompose => options
            .settings
            .par_iter()
            .map(|&s| Ok((s, fit_recipe(recipe, s, MAX_RESULTS, &sp.train, seed)?.model)))
            .collect::<Result<Vec<_>, ExperimentError>>()?,
    };
    let points = keys
        .par_iter()
        .map(|&(setting, count)| {
            let pred = match options.mode {
                SweepMode::Retrain => fit_recipe(recipe, setting, count, &sp.train, seed)?.model.predict(&sp.test)?,
                SweepMode::Recompose => {
                    let model = &full_models.iter().find(|(s, _)| *s == setting).expect("fitted per setting").1;
                    model.predict(&truncated(&sp.test, count))?
                }
            };
            Ok(SweepPoint {
                setting,
                count,
                scores: regression_scores(&y, &pred)?,
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(SweepReport {
        mode: options.mode,
        split: sp.info,
        corpus_hash: corpus.content_hash(),
        options_hash: spec_hash(&(recipe, options)),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::{corpus, record, serp};
    use crate::corpus::Provenance;

    fn spec(kinds: &[ModelKind]) -> ExperimentSpec {
        ExperimentSpec {
            roster: kinds.iter().map(|&k| ModelRecipe::new(k)).collect(),
            ..Default::default()
        }
    }

    fn titled(n: usize) -> Corpus {
        let records = (0..n)
            .map(|i| {
                let e = (i % 5) as u8;
                // Query tokens repeat across records so that the titles carry the signal.
                let mut r = record(&format!("query {}", i % 7), e * 2);
                let hot = format!("hot{e}");
                r.serp = Some(serp(&[hot.as_str(), "plain", "other"]));
                r
            })
            .collect();
        Corpus::new(records, Provenance::default()).unwrap()
    }

    #[test]
    fn mean_and_median_rows_hold_exact_scores() {
        let c = corpus(&[0, 1, 1, 2, 3, 5, 8, 8, 9, 10]);
        let rep = run_main_comparison(&spec(&[ModelKind::Median, ModelKind::Mean]), &c).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert_eq!(rep.rows[0].kind, ModelKind::Mean);
        let (train, test) = c.holdout_split(0.2, 0).unwrap();
        let mean = train.labels().iter().sum::<f64>() / train.len() as f64;
        let expected = regression_scores(&test.labels(), &vec![mean; test.len()]).unwrap();
        assert_eq!(rep.rows[0].scores, expected);
        assert!(rep.rows[0].vs_mean.is_none());
        assert!(rep.rows[1].vs_median.is_none());
        assert_eq!(rep.splits[0].n_test, 2);
    }

    #[test]
    fn empty_roster_is_rejected() {
        let c = corpus(&[1, 2, 3]);
        assert!(matches!(run_main_comparison(&spec(&[]), &c), Err(ExperimentError::EmptyRoster)));
    }

    #[test]
    fn learned_model_is_marked_against_baselines() {
        let c = titled(200);
        let mut s = spec(&[ModelKind::Mean, ModelKind::LinearRegression]);
        s.settings = vec![InputSetting::QueryTitles];
        let rep = run_main_comparison(&s, &c).unwrap();
        let lr = rep.row(Dataset::Full, ModelKind::LinearRegression).unwrap();
        assert!(lr.scores.r2 > 0.9, "{:?}", lr.scores);
        assert_eq!(lr.markers, "†‡");
        assert_eq!(rep.row(Dataset::Full, ModelKind::Mean).unwrap().markers, "");
        let tsv = rep.to_table().to_tsv();
        assert!(tsv.contains("# spec_hash: "));
        assert!(tsv.contains("LinearRegression\t"));
    }

    #[test]
    fn serp_less_records_are_excluded_and_counted() {
        let mut records = titled(40).into_records();
        records[3].serp = None;
        records[7].serp = None;
        let c = Corpus::new(records, Provenance::default()).unwrap();
        let mut s = spec(&[ModelKind::Mean]);
        s.settings = vec![InputSetting::Query, InputSetting::QueryTitles];
        let rep = run_ablation(&s, &c).unwrap();
        assert_eq!(rep.splits[0].excluded_missing_serp, 2);
        assert_eq!(rep.splits[0].n_train + rep.splits[0].n_test, 38);
        assert_eq!(rep.rows.len(), 2);
        let q_only = run_ablation(
            &ExperimentSpec {
                settings: vec![InputSetting::Query],
                ..s
            },
            &c,
        )
        .unwrap();
        assert_eq!(q_only.rows.len(), 1);
        assert_eq!(q_only.splits[0].excluded_missing_serp, 0);
    }

    #[test]
    fn el_only_drops_zero_labels() {
        let c = corpus(&[0, 0, 1, 2, 3, 4, 5, 6, 7, 8]);
        let mut s = spec(&[ModelKind::Mean]);
        s.datasets = vec![Dataset::Full, Dataset::ElOnly];
        let rep = run_main_comparison(&s, &c).unwrap();
        assert_eq!(rep.splits[1].n_train + rep.splits[1].n_test, 8);
        assert_eq!(rep.rows[1].dataset, Dataset::ElOnly);
    }

    #[test]
    fn ablation_marks_titles_over_query() {
        let c = titled(200);
        let mut s = spec(&[ModelKind::LinearRegression]);
        s.settings = InputSetting::ALL.to_vec();
        let rep = run_ablation(&s, &c).unwrap();
        assert_eq!(rep.rows.len(), 6);
        let q = rep.row(Dataset::Full, ModelKind::LinearRegression, InputSetting::Query).unwrap();
        let t = rep.row(Dataset::Full, ModelKind::LinearRegression, InputSetting::QueryTitles).unwrap();
        assert!(q.vs_query.is_none());
        assert!(t.scores.r2 > q.scores.r2 + 0.5);
        assert!(t.markers.contains('†'));
    }

    #[test]
    fn sweep_at_ten_matches_ablation_and_zero_matches_query_pane() {
        let c = titled(120);
        let recipe = ModelRecipe::new(ModelKind::LinearRegression);
        let opts = SweepOptions {
            counts: vec![0, 1, 10],
            ..Default::default()
        };
        let sweep = sweep_result_count(&recipe, &c, &opts).unwrap();
        let mut s = spec(&[ModelKind::LinearRegression]);
        s.settings = vec![InputSetting::QueryPane, InputSetting::QueryPaneTitles, InputSetting::QueryPaneSnippets];
        let abl = run_ablation(&s, &c).unwrap();
        for setting in [InputSetting::QueryPaneTitles, InputSetting::QueryPaneSnippets] {
            let cell = abl.row(Dataset::Full, ModelKind::LinearRegression, setting).unwrap();
            assert_eq!(sweep.r2(setting, 10), Some(cell.scores.r2));
        }
        let qp = abl.row(Dataset::Full, ModelKind::LinearRegression, InputSetting::QueryPane).unwrap();
        assert_eq!(sweep.r2(InputSetting::QueryPaneTitles, 0), Some(qp.scores.r2));
        assert_eq!(sweep.series().len(), 6);
    }

    #[test]
    fn recompose_mode_truncates_test_serps() {
        let c = titled(120);
        let recipe = ModelRecipe::new(ModelKind::LinearRegression);
        let opts = SweepOptions {
            counts: vec![0, 10],
            settings: vec![InputSetting::QueryTitles],
            mode: SweepMode::Recompose,
            ..Default::default()
        };
        let sweep = sweep_result_count(&recipe, &c, &opts).unwrap();
        assert!(sweep.r2(InputSetting::QueryTitles, 10).unwrap() > 0.9);
        assert!(sweep.r2(InputSetting::QueryTitles, 0).unwrap() < 0.5);
    }

    #[test]
    fn sweep_rejects_settings_without_results() {
        let c = titled(20);
        let opts = SweepOptions {
            settings: vec![InputSetting::QueryPane],
            ..Default::default()
        };
        assert!(matches!(
            sweep_result_count(&ModelRecipe::default(), &c, &opts),
            Err(ExperimentError::InvalidSpec(_))
        ));
    }

    #[test]
    fn seeds_average_normal_baseline_scores() {
        let c = corpus(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 3, 4, 5, 6]);
        let mut s = spec(&[ModelKind::Normal]);
        s.train_seeds = vec![1, 2, 3];
        let rep = run_main_comparison(&s, &c).unwrap();
        let r = &rep.rows[0];
        assert_eq!(r.per_seed.len(), 3);
        let mean_mse = r.per_seed.iter().map(|x| x.mse).sum::<f64>() / 3.0;
        assert!((r.scores.mse - mean_mse).abs() < 1e-12);
    }
}
