//! Exhaustive grid search with shuffled k-fold cross-validation on the training split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{labels, Params, Predictor, PredictorError};
use crate::corpus::ClarificationRecord;
use crate::metrics::regression_scores;

/// Ordered axes of candidate values. Candidates enumerate the cartesian product with the
/// first axis varying slowest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub axes: Vec<(String, Vec<serde_json::Value>)>,
}

impl ParamGrid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn axis<V: Into<serde_json::Value>>(mut self, name: &str, values: impl IntoIterator<Item = V>) -> Self {
        self.axes.push((name.to_string(), values.into_iter().map(Into::into).collect()));
        self
    }

    pub fn candidates(&self) -> Vec<Params> {
        let mut out = vec![Params::new()];
        for (name, values) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.insert(name.clone(), v.clone());
                        q
                    })
                })
                .collect();
        }
        out
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.1.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Model-selection criterion, oriented so that larger is better.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    #[default]
    R2,
    NegMae,
    NegMse,
}

impl Scoring {
    fn score(self, y: &[f64], yhat: &[f64]) -> f64 {
        match regression_scores(y, yhat) {
            Ok(s) => match self {
                Scoring::R2 => s.r2,
                Scoring::NegMae => -s.mae,
                Scoring::NegMse => -s.mse,
            },
            Err(_) => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffled k-fold split of `0..n`: fold `f` holds the shuffled positions `i` with
/// `i mod k == f`. Index lists are sorted.
pub fn cv_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>, PredictorError> {
    if k < 2 || n < k {
        return Err(PredictorError::TooFewForFolds { folds: k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assign = vec![0usize; n];
    for (pos, &idx) in order.iter().enumerate() {
        assign[idx] = pos % k;
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| assign[i] == f);
            Fold { train, test }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub scoring: Scoring,
    pub folds: usize,
    pub candidates: Vec<Params>,
    /// `fold_scores[c][f]`: score of candidate `c` on held-out fold `f`.
    pub fold_scores: Vec<Vec<f64>>,
    pub mean_scores: Vec<f64>,
    pub best_index: usize,
    pub best_params: Params,
}

impl GridSearchResult {
    /// One row per candidate: params as JSON, mean score, per-fold scores.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("candidate\tparams\tmean_score");
        for f in 0..self.folds {
            out.push_str(&format!("\tfold_{f}"));
        }
        out.push('\n');
        for (c, params) in self.candidates.iter().enumerate() {
            let json = serde_json::to_string(params).expect("params serialise");
            out.push_str(&format!("{c}\t{json}\t{:.6}", self.mean_scores[c]));
            for s in &self.fold_scores[c] {
                out.push_str(&format!("\t{s:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

fn select(records: &[ClarificationRecord], idx: &[usize]) -> Vec<ClarificationRecord> {
    idx.iter().map(|&i| records[i].clone()).collect()
}

/// Cross-validates every grid candidate on `train`, then refits the best one on all of
/// `train`. NaN scores rank below every finite score; ties keep the earliest candidate.
pub fn grid_search_cv<F>(
    build: F,
    grid: &ParamGrid,
    train: &[ClarificationRecord],
    folds: usize,
    scoring: Scoring,
    seed: u64,
) -> Result<(GridSearchResult, Box<dyn Predictor>), PredictorError>
where
    F: Fn(&Params) -> Result<Box<dyn Predictor>, PredictorError> + Sync,
{
    let candidates = grid.candidates();
    if grid.is_empty() {
        return Err(PredictorError::EmptyGrid);
    }
    let splits = cv_folds(train.len(), folds, seed)?;
    for c in &candidates {
        build(c)?;
    }
    let cells: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..folds).map(move |f| (c, f)))
        .collect();
    let scores = cells
        .par_iter()
        .map(|&(c, f)| {
            let fold = &splits[f];
            let mut model = build(&candidates[c])?;
            model.fit(&select(train, &fold.train), seed)?;
            let held = select(train, &fold.test);
            let pred = model.predict(&held)?;
            Ok(scoring.score(&labels(&held), &pred))
        })
        .collect::<Result<Vec<f64>, PredictorError>>()?;
    let fold_scores: Vec<Vec<f64>> = scores.chunks(folds).map(<[f64]>::to_vec).collect();
    let mean_scores: Vec<f64> = fold_scores.iter().map(|s| s.iter().sum::<f64>() / folds as f64).collect();
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    let mut best_index = 0;
    for (c, &s) in mean_scores.iter().enumerate() {
        if key(s) > key(mean_scores[best_index]) {
            best_index = c;
        }
    }
    let best_params = candidates[best_index].clone();
    log::info!("grid search best {:?} (mean {:?} {:.4})", best_params, scoring, mean_scores[best_index]);
    let mut model = build(&best_params)?;
    model.fit(train, seed)?;
    Ok((
        GridSearchResult {
            scoring,
            folds,
            candidates,
            fold_scores,
            mean_scores,
            best_index,
            best_params,
        },
        model,
    ))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;
    use std::sync::{Arc, Mutex};

    use super::*;
    use crate::corpus::fixtures::record;
    use crate::featurize::InputSetting;
    use crate::predictors::{MeanBaseline, ModelCheckpoint, RandomForest, TextRegressor};

    #[test]
    fn grid_enumeration_order() {
        let g = ParamGrid::new().axis("a", [1, 2]).axis("b", ["x", "y", "z"]);
        let c = g.candidates();
        assert_eq!(c.len(), 6);
        assert_eq!(g.len(), 6);
        assert_eq!(c[0]["a"], 1);
        assert_eq!(c[0]["b"], "x");
        assert_eq!(c[1]["b"], "y");
        assert_eq!(c[3]["a"], 2);
        assert!(ParamGrid::new().axis::<i32>("a", []).is_empty());
        assert_eq!(ParamGrid::new().candidates(), vec![Params::new()]);
    }

    #[test]
    fn folds_partition() {
        let folds = cv_folds(23, 5, 1).unwrap();
        let mut all = BTreeSet::new();
        for f in &folds {
            assert!(f.test.len() == 4 || f.test.len() == 5);
            assert_eq!(f.test.len() + f.train.len(), 23);
            let test: BTreeSet<_> = f.test.iter().collect();
            assert!(f.train.iter().all(|i| !test.contains(i)));
            all.extend(f.test.iter().copied());
        }
        assert_eq!(all.len(), 23);
        assert_ne!(cv_folds(23, 5, 2).unwrap(), folds);
        assert!(cv_folds(3, 5, 0).is_err());
        assert!(cv_folds(3, 1, 0).is_err());
    }

    /// Predicts a constant given by its `value` parameter and records what it saw.
    struct Spy {
        value: f64,
        trained_on: Vec<String>,
        log: Arc<Mutex<Vec<(Vec<String>, Vec<String>)>>>,
    }

    impl Predictor for Spy {
        fn name(&self) -> &str {
            "spy"
        }
        fn fit(&mut self, train: &[ClarificationRecord], _seed: u64) -> Result<(), PredictorError> {
            self.trained_on = train.iter().map(|r| r.query.clone()).collect();
            Ok(())
        }
        fn predict(&self, records: &[ClarificationRecord]) -> Result<Vec<f64>, PredictorError> {
            self.log
                .lock()
                .unwrap()
                .push((self.trained_on.clone(), records.iter().map(|r| r.query.clone()).collect()));
            Ok(vec![self.value; records.len()])
        }
        fn is_fitted(&self) -> bool {
            true
        }
        fn hyperparameters(&self) -> Params {
            Params::new()
        }
        fn checkpoint(&self) -> Result<ModelCheckpoint, PredictorError> {
            Err(PredictorError::Other("spy".into()))
        }
    }

    #[test]
    fn no_fold_leakage_and_best_is_selected() {
        let train: Vec<_> = (0..20).map(|i| record(&format!("q{i}"), (i % 3) as u8 * 2)).collect();
        let log = Arc::new(Mutex::new(Vec::new()));
        let grid = ParamGrid::new().axis("value", [0.0, 2.0, 2.0, 9.0]);
        let build = |p: &Params| -> Result<Box<dyn Predictor>, PredictorError> {
            Ok(Box::new(Spy {
                value: p["value"].as_f64().unwrap(),
                trained_on: vec![],
                log: log.clone(),
            }))
        };
        let (res, model) = grid_search_cv(build, &grid, &train, 4, Scoring::NegMse, 3).unwrap();
        for (seen, predicted) in log.lock().unwrap().iter() {
            let seen: BTreeSet<_> = seen.iter().collect();
            assert!(predicted.iter().all(|q| !seen.contains(q)));
            assert_eq!(seen.len() + predicted.len(), 20);
        }
        // labels average 2: the first of the two equal best candidates wins
        assert_eq!(res.best_index, 1);
        assert_eq!(res.fold_scores.len(), 4);
        assert!(res.to_tsv().lines().count() == 5);
        assert!(model.is_fitted());
    }

    #[test]
    fn nan_scores_rank_last() {
        // every fold's labels are constant, so R² is NaN unless the prediction is exact
        let train: Vec<_> = (0..10).map(|i| record(&format!("q{i}"), 3)).collect();
        let grid = ParamGrid::new().axis("value", [1.0, 3.0]);
        let log = Arc::new(Mutex::new(Vec::new()));
        let build = |p: &Params| -> Result<Box<dyn Predictor>, PredictorError> {
            Ok(Box::new(Spy {
                value: p["value"].as_f64().unwrap(),
                trained_on: vec![],
                log: log.clone(),
            }))
        };
        let (res, _) = grid_search_cv(build, &grid, &train, 2, Scoring::R2, 0).unwrap();
        assert!(res.mean_scores[0].is_nan());
        assert_eq!(res.best_index, 1);
    }

    #[test]
    fn deterministic_across_runs() {
        let train: Vec<_> = (0..15).map(|i| record(&format!("q{i}"), (i * 3 % 11) as u8)).collect();
        let grid = ParamGrid::new().axis("unused", [1, 2]);
        let build = |_: &Params| -> Result<Box<dyn Predictor>, PredictorError> { Ok(Box::new(MeanBaseline::new())) };
        let a = grid_search_cv(build, &grid, &train, 3, Scoring::R2, 8).unwrap().0;
        let b = grid_search_cv(build, &grid, &train, 3, Scoring::R2, 8).unwrap().0;
        assert_eq!(a.fold_scores, b.fold_scores);
        assert!(matches!(
            grid_search_cv(build, &ParamGrid::new().axis::<i32>("x", []), &train, 3, Scoring::R2, 8),
            Err(PredictorError::EmptyGrid)
        ));
    }

    #[test]
    fn one_point_grid_returns_refit_model() {
        let train: Vec<_> = (0..12).map(|i| record(&format!("q{i}"), (i % 5) as u8)).collect();
        let grid = ParamGrid::new().axis("n_estimators", [3]);
        let build = |p: &Params| -> Result<Box<dyn Predictor>, PredictorError> {
            Ok(Box::new(TextRegressor::<RandomForest>::from_params(InputSetting::Query, 10, p)?))
        };
        let (res, model) = grid_search_cv(build, &grid, &train, 3, Scoring::R2, 0).unwrap();
        assert_eq!(res.best_index, 0);
        assert_eq!(res.best_params["n_estimators"], 3);
        assert!(model.is_fitted());
        assert_eq!(model.hyperparameters()["n_estimators"], 3);
        assert_eq!(model.predict(&train).unwrap().len(), 12);
    }

    #[test]
    fn dominant_candidate_is_selected() {
        // Labels are a deterministic function of one keyword: depth-0 trees can only predict
        // the mean, unbounded trees recover the keyword split.
        let train: Vec<_> = (0..40)
            .map(|i| {
                let hot = i % 2 == 0;
                record(&format!("filler{} {}", i % 7, if hot { "hot" } else { "cold" }), if hot { 9 } else { 1 })
            })
            .collect();
        let grid = ParamGrid::new()
            .axis("max_depth", [Some(0), None])
            .axis("n_estimators", [5]);
        let build = |p: &Params| -> Result<Box<dyn Predictor>, PredictorError> {
            Ok(Box::new(TextRegressor::<RandomForest>::from_params(InputSetting::Query, 10, p)?))
        };
        let (res, _) = grid_search_cv(build, &grid, &train, 5, Scoring::R2, 1).unwrap();
        assert_eq!(res.best_index, 1);
        assert!(res.mean_scores[1] > 0.9);
        assert!(res.mean_scores[0] < 0.1);
    }
}
