//! Ranking the candidate panes of a query by predicted engagement.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::{fmt_metric, Table};
use super::ExperimentError;
use crate::corpus::{holdout_indices, Corpus};
use crate::metrics::{ndcg_at_k, MetricsError, NdcgOptions, PaneScore, QueryPanes, RankedPaneList};
use crate::predictors::Predictor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankOptions {
    pub ks: Vec<usize>,
    /// Shuffles averaged by the random baseline.
    pub random_shuffles: usize,
    pub seed: u64,
    pub ndcg: NdcgOptions,
}

impl Default for RerankOptions {
    fn default() -> Self {
        Self {
            ks: vec![1, 2, 3, 5],
            random_shuffles: 10,
            seed: 0,
            ndcg: NdcgOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRow {
    pub method: String,
    /// nDCG at each of the option's cutoffs, in order.
    pub ndcg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankReport {
    pub ks: Vec<usize>,
    pub n_queries: usize,
    pub n_panes: usize,
    /// Model, then Random, then Worst-question.
    pub rows: Vec<RerankRow>,
}

impl RerankReport {
    pub fn ndcg(&self, method: &str, k: usize) -> Option<f64> {
        let c = self.ks.iter().position(|&x| x == k)?;
        self.rows.iter().find(|r| r.method == method).map(|r| r.ndcg[c])
    }

    pub fn to_table(&self) -> Table {
        let mut header = vec!["method".to_string()];
        header.extend(self.ks.iter().map(|k| format!("ndcg@{k}")));
        let mut t = Table {
            title: "pane re-ranking".into(),
            header,
            ..Default::default()
        };
        t.meta("queries", self.n_queries).meta("panes", self.n_panes);
        for r in &self.rows {
            let mut row = vec![r.method.clone()];
            row.extend(r.ndcg.iter().map(|&v| fmt_metric(v)));
            t.push(row);
        }
        t
    }
}

fn list_with(corpus: &Corpus, mut score: impl FnMut(&str, &[usize]) -> Vec<f64>) -> RankedPaneList {
    let records = corpus.records();
    RankedPaneList {
        queries: corpus
            .multi_pane_queries()
            .map(|(q, idx)| {
                let scores = score(q, idx);
                QueryPanes {
                    query: q.to_string(),
                    panes: idx
                        .iter()
                        .zip(scores)
                        .map(|(&i, predicted)| PaneScore {
                            pane_id: i,
                            truth: records[i].engagement_f64(),
                            predicted,
                        })
                        .collect(),
                }
            })
            .collect(),
    }
}

fn ndcg_row(method: &str, lists: &[RankedPaneList], options: &RerankOptions) -> Result<RerankRow, MetricsError> {
    let ndcg = options
        .ks
        .iter()
        .map(|&k| {
            let total = lists.iter().map(|l| ndcg_at_k(l, k, options.ndcg)).sum::<Result<f64, _>>()?;
            Ok(total / lists.len() as f64)
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(RerankRow {
        method: method.to_string(),
        ndcg,
    })
}

/// Re-ranks each multi-pane query by `scores` (aligned with the corpus records) and
/// reports nDCG for the scores and two baselines.
///
/// Random averages [`RerankOptions::random_shuffles`] seeded uniform shuffles.
/// Worst-question puts the lowest-engagement pane first and orders the rest ideally.
pub fn rerank_with_scores(
    scores: &[f64],
    corpus: &Corpus,
    options: &RerankOptions,
) -> Result<RerankReport, ExperimentError> {
    if scores.len() != corpus.len() {
        return Err(MetricsError::LengthMismatch(corpus.len(), scores.len()).into());
    }
    if options.ks.is_empty() || options.random_shuffles == 0 {
        return Err(ExperimentError::InvalidSpec("re-ranking needs cutoffs and at least one shuffle".into()));
    }
    let n_queries = corpus.multi_pane_queries().count();
    if n_queries == 0 {
        return Err(ExperimentError::NoMultiPaneQueries);
    }
    let n_panes = corpus.multi_pane_queries().map(|(_, i)| i.len()).sum();
    let model = list_with(corpus, |_, idx| idx.iter().map(|&i| scores[i]).collect());
    let random: Vec<RankedPaneList> = (0..options.random_shuffles)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_add(s as u64));
            list_with(corpus, |_, idx| {
                let mut order: Vec<usize> = (0..idx.len()).collect();
                order.shuffle(&mut rng);
                let mut score = vec![0.0; idx.len()];
                for (rank, &p) in order.iter().enumerate() {
                    score[p] = (idx.len() - rank) as f64;
                }
                score
            })
        })
        .collect();
    let labels = corpus.labels();
    let worst = list_with(corpus, |_, idx| {
        let truth: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
        let lowest = (0..truth.len())
            .min_by(|&a, &b| truth[a].total_cmp(&truth[b]))
            .expect("at least two panes");
        let top = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
        truth.iter().enumerate().map(|(j, &t)| if j == lowest { top } else { t }).collect()
    });
    Ok(RerankReport {
        ks: options.ks.clone(),
        n_queries,
        n_panes,
        rows: vec![
            ndcg_row("Model", std::slice::from_ref(&model), options)?,
            ndcg_row("Random", &random, options)?,
            ndcg_row("Worst-question", std::slice::from_ref(&worst), options)?,
        ],
    })
}

/// Scores every record of `corpus` with a fitted `model` and re-ranks the panes.
pub fn run_pane_reranking(
    model: &dyn Predictor,
    corpus: &Corpus,
    options: &RerankOptions,
) -> Result<RerankReport, ExperimentError> {
    if corpus.multi_pane_queries().next().is_none() {
        return Err(ExperimentError::NoMultiPaneQueries);
    }
    let scores = model.predict(corpus.records())?;
    rerank_with_scores(&scores, corpus, options)
}

/// Splits by query: a seeded `test_fraction` of the multi-pane queries goes to the test side
/// with all of its panes; everything else trains. Keeps pane groups intact for re-ranking.
pub fn pane_group_split(corpus: &Corpus, test_fraction: f64, seed: u64) -> Result<(Corpus, Corpus), ExperimentError> {
    let groups: Vec<&[usize]> = corpus.multi_pane_queries().map(|(_, i)| i).collect();
    if groups.is_empty() {
        return Err(ExperimentError::NoMultiPaneQueries);
    }
    let test_groups: Vec<usize> = if groups.len() == 1 {
        vec![0]
    } else {
        holdout_indices(groups.len(), test_fraction, seed)?.1
    };
    let mut in_test = vec![false; corpus.len()];
    for g in test_groups {
        for &i in groups[g] {
            in_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..corpus.len()).partition(|&i| in_test[i]);
    if train.is_empty() {
        return Err(ExperimentError::InvalidSpec("every record belongs to a held-out query".into()));
    }
    let label = format!("pane-split(fraction={test_fraction},seed={seed})");
    Ok((
        corpus.subset(&train, &format!("{label}:train"))?,
        corpus.subset(&test, &format!("{label}:test"))?,
    ))
}
