//! Model recipes: which model, which hyperparameters, and optionally a grid to search.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::ExperimentError;
use crate::corpus::ClarificationRecord;
use crate::featurize::InputSetting;
use crate::neural::{BiLstmPredictor, ElbertPredictor, EncoderSpec, HeadConfig, RecurrentConfig, TrainConfig};
use crate::predictors::{
    grid_search_cv, GridSearchResult, LinearRegression, MeanBaseline, MedianBaseline, NormalBaseline, ParamGrid,
    Params, Predictor, RandomForest, Scoring, Svr, TextRegressor,
};

/// Model families in report order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mean,
    Median,
    Normal,
    #[default]
    LinearRegression,
    Svr,
    RandomForest,
    Bilstm,
    Elbert,
}

impl ModelKind {
    pub const ALL: [ModelKind; 8] = [
        ModelKind::Mean,
        ModelKind::Median,
        ModelKind::Normal,
        ModelKind::LinearRegression,
        ModelKind::Svr,
        ModelKind::RandomForest,
        ModelKind::Bilstm,
        ModelKind::Elbert,
    ];

    /// Name used in report rows.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Mean => "MeanEngagement",
            ModelKind::Median => "MedianEngagement",
            ModelKind::Normal => "NormalDistribution",
            ModelKind::LinearRegression => "LinearRegression",
            ModelKind::Svr => "SVR",
            ModelKind::RandomForest => "RandomForest",
            ModelKind::Bilstm => "BiLSTM",
            ModelKind::Elbert => "ELBERT",
        }
    }

    /// Ignores its input text.
    pub fn is_static(self) -> bool {
        matches!(self, ModelKind::Mean | ModelKind::Median | ModelKind::Normal)
    }

    pub fn is_neural(self) -> bool {
        matches!(self, ModelKind::Bilstm | ModelKind::Elbert)
    }

    /// The grid searched when a recipe asks for the default one.
    pub fn default_grid(self) -> BTreeMap<String, Vec<Value>> {
        let mut g = BTreeMap::new();
        match self {
            ModelKind::LinearRegression => {}
            ModelKind::Svr => {
                g.insert("C".into(), vec![json!(0.1), json!(1.0), json!(10.0)]);
                g.insert("epsilon".into(), vec![json!(0.01), json!(0.1), json!(0.5)]);
                g.insert("gamma".into(), vec![json!("scale"), json!(0.01), json!(0.1)]);
                g.insert("kernel".into(), vec![json!("linear"), json!("rbf")]);
            }
            ModelKind::RandomForest => {
                g.insert("n_estimators".into(), vec![json!(100), json!(300)]);
                g.insert("max_depth".into(), vec![json!(8), json!(16), Value::Null]);
            }
            _ => return g,
        }
        g.insert("min_df".into(), vec![json!(1), json!(5)]);
        g
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// A model with fixed hyperparameters and an optional grid searched by cross-validation on
/// the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelRecipe {
    pub kind: ModelKind,
    /// Fixed hyperparameters of classical models.
    pub params: Params,
    /// Axes to search, on top of `params`. Empty means no search.
    pub grid: BTreeMap<String, Vec<Value>>,
    /// Search [`ModelKind::default_grid`] when `grid` is empty.
    pub default_grid: bool,
    pub cv_folds: usize,
    pub scoring: Scoring,
    pub encoder: EncoderSpec,
    pub head: HeadConfig,
    pub recurrent: RecurrentConfig,
    pub train: TrainConfig,
}

impl Default for ModelRecipe {
    fn default() -> Self {
        Self {
            kind: ModelKind::default(),
            params: Params::new(),
            grid: BTreeMap::new(),
            default_grid: false,
            cv_folds: 5,
            scoring: Scoring::R2,
            encoder: EncoderSpec::default(),
            head: HeadConfig::default(),
            recurrent: RecurrentConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ModelRecipe {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            ..Default::default()
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    /// The grid that will actually be searched, if any.
    pub fn effective_grid(&self) -> Option<ParamGrid> {
        let axes = if self.grid.is_empty() && self.default_grid {
            self.kind.default_grid()
        } else {
            self.grid.clone()
        };
        if axes.is_empty() {
            return None;
        }
        let mut g = ParamGrid::new();
        for (k, v) in axes {
            g = g.axis(&k, v);
        }
        Some(g)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidSpec(m));
        let searches = !self.grid.is_empty() || self.default_grid;
        if (self.kind.is_static() || self.kind.is_neural()) && (!self.params.is_empty() || !self.grid.is_empty()) {
            return bad(format!("{} takes no params or grid", self.kind));
        }
        if searches && self.cv_folds < 2 {
            return bad("cv_folds must be at least 2".into());
        }
        if let Some(k) = self.grid.keys().find(|k| self.params.contains_key(*k)) {
            return bad(format!("`{k}` is both fixed and searched"));
        }
        if let Some((k, _)) = self.grid.iter().find(|(_, v)| v.is_empty()) {
            return bad(format!("grid axis `{k}` is empty"));
        }
        Ok(())
    }
}

/// Builds an unfitted predictor for `recipe` with `params` merged over its fixed ones.
pub fn build_predictor(
    recipe: &ModelRecipe,
    setting: InputSetting,
    max_results: usize,
    extra: &Params,
) -> Result<Box<dyn Predictor>, ExperimentError> {
    let mut params = recipe.params.clone();
    params.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
    Ok(match recipe.kind {
        ModelKind::Mean => Box::new(MeanBaseline::new()),
        ModelKind::Median => Box::new(MedianBaseline::new()),
        ModelKind::Normal => Box::new(NormalBaseline::new()),
        ModelKind::LinearRegression => {
            Box::new(TextRegressor::<LinearRegression>::from_params(setting, max_results, &params)?)
        }
        ModelKind::Svr => Box::new(TextRegressor::<Svr>::from_params(setting, max_results, &params)?),
        ModelKind::RandomForest => Box::new(TextRegressor::<RandomForest>::from_params(setting, max_results, &params)?),
        ModelKind::Bilstm => Box::new(BiLstmPredictor::new(
            setting,
            max_results,
            recipe.recurrent.clone(),
            recipe.train.clone(),
        )),
        ModelKind::Elbert => Box::new(ElbertPredictor::new(
            setting,
            max_results,
            recipe.encoder.clone(),
            recipe.head,
            recipe.train.clone(),
        )),
    })
}

pub struct FittedModel {
    pub model: Box<dyn Predictor>,
    pub grid: Option<GridSearchResult>,
}

/// Fits `recipe` on `train`, running the grid search first when the recipe has one.
pub fn fit_recipe(
    recipe: &ModelRecipe,
    setting: InputSetting,
    max_results: usize,
    train: &[ClarificationRecord],
    seed: u64,
) -> Result<FittedModel, ExperimentError> {
    recipe.validate()?;
    match recipe.effective_grid() {
        Some(grid) => {
            let build = |p: &Params| {
                build_predictor(recipe, setting, max_results, p).map_err(|e| match e {
                    ExperimentError::Predictor(p) => p,
                    other => crate::predictors::PredictorError::Other(other.to_string()),
                })
            };
            let (result, model) = grid_search_cv(build, &grid, train, recipe.cv_folds, recipe.scoring, seed)?;
            Ok(FittedModel {
                model,
                grid: Some(result),
            })
        }
        None => {
            let mut model = build_predictor(recipe, setting, max_results, &Params::new())?;
            model.fit(train, seed)?;
            Ok(FittedModel { model, grid: None })
        }
    }
}
