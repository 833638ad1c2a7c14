use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaneScore {
    pub pane_id: usize,
    pub truth: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPanes {
    pub query: String,
    pub panes: Vec<PaneScore>,
}

/// Per-query candidate panes with true engagement and predicted scores.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedPaneList {
    pub queries: Vec<QueryPanes>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    /// gain = engagement
    #[default]
    Linear,
    /// gain = 2^engagement - 1
    Exponential,
}

/// What a query whose panes all have zero engagement contributes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroQueries {
    #[default]
    ContributeOne,
    Exclude,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NdcgOptions {
    pub gain: Gain,
    pub zero_queries: ZeroQueries,
}

fn gain(g: Gain, rel: f64) -> f64 {
    match g {
        Gain::Linear => rel,
        Gain::Exponential => rel.exp2() - 1.0,
    }
}

fn dcg(rels: impl Iterator<Item = f64>, k: usize, g: Gain) -> f64 {
    rels.take(k)
        .enumerate()
        .map(|(i, rel)| gain(g, rel) / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k of one query. Predicted order sorts by score descending with ties broken by
/// ascending pane id. `None` when the query is excluded under [`ZeroQueries::Exclude`].
pub fn query_ndcg(panes: &[PaneScore], k: usize, options: NdcgOptions) -> Option<f64> {
    let mut predicted: Vec<&PaneScore> = panes.iter().collect();
    predicted.sort_by(|a, b| b.predicted.total_cmp(&a.predicted).then(a.pane_id.cmp(&b.pane_id)));
    let mut ideal: Vec<f64> = panes.iter().map(|p| p.truth).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(ideal.into_iter(), k, options.gain);
    if idcg <= 0.0 {
        return match options.zero_queries {
            ZeroQueries::ContributeOne => Some(1.0),
            ZeroQueries::Exclude => None,
        };
    }
    Some(dcg(predicted.iter().map(|p| p.truth), k, options.gain) / idcg)
}

/// Mean nDCG@k over queries with at least two panes.
pub fn ndcg_at_k(list: &RankedPaneList, k: usize, options: NdcgOptions) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::InvalidK);
    }
    let values: Vec<f64> = list
        .queries
        .iter()
        .filter(|q| q.panes.len() >= 2)
        .filter_map(|q| query_ndcg(&q.panes, k, options))
        .collect();
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
