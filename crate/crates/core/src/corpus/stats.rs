//! Length statistics over a corpus. Lengths count whitespace-delimited tokens.

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError};

/// Number of whitespace-delimited tokens.
pub fn whitespace_len(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl FieldSummary {
    /// `None` for an empty sample.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let median = if m % 2 == 1 {
            sorted[m / 2]
        } else {
            (sorted[m / 2 - 1] + sorted[m / 2]) / 2.0
        };
        Some(Self {
            count: values.len(),
            mean,
            std: var.sqrt(),
            median,
            min: sorted[0],
            max: sorted[m - 1],
        })
    }
}

/// Per-field summaries. SERP fields are `None` when no record carries a SERP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub records: usize,
    pub query_length: FieldSummary,
    pub question_length: FieldSummary,
    pub answers_per_query: FieldSummary,
    pub title_length: Option<FieldSummary>,
    pub snippet_length: Option<FieldSummary>,
    pub results_per_query: Option<FieldSummary>,
}

impl CorpusStats {
    /// Rows in display order: (label, summary).
    pub fn rows(&self) -> Vec<(&'static str, Option<&FieldSummary>)> {
        vec![
            ("query_length", Some(&self.query_length)),
            ("question_length", Some(&self.question_length)),
            ("title_length", self.title_length.as_ref()),
            ("snippet_length", self.snippet_length.as_ref()),
            ("answers_per_query", Some(&self.answers_per_query)),
            ("results_per_query", self.results_per_query.as_ref()),
        ]
    }

    /// Tab-separated table with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("field\tcount\tmean\tstd\tmedian\tmin\tmax\n");
        for (label, s) in self.rows() {
            match s {
                Some(s) => out.push_str(&format!(
                    "{label}\t{}\t{:.4}\t{:.4}\t{}\t{}\t{}\n",
                    s.count, s.mean, s.std, s.median, s.min, s.max
                )),
                None => out.push_str(&format!("{label}\t0\tNaN\tNaN\tNaN\tNaN\tNaN\n")),
            }
        }
        out
    }
}

/// Computes [`CorpusStats`]. Title and snippet lengths are taken per individual result;
/// results-per-query only over records that carry a SERP.
pub fn compute_stats(corpus: &Corpus) -> Result<CorpusStats, CorpusError> {
    let records = corpus.records();
    if records.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let lens = |f: &dyn Fn(&super::ClarificationRecord) -> usize| -> Vec<f64> {
        records.iter().map(|r| f(r) as f64).collect()
    };
    let query = lens(&|r| whitespace_len(&r.query));
    let question = lens(&|r| whitespace_len(&r.question));
    let answers = lens(&|r| r.answers.len());
    let serps: Vec<_> = records.iter().filter_map(|r| r.serp.as_ref()).collect();
    let titles: Vec<f64> = serps.iter().flat_map(|s| s.titles()).map(|t| whitespace_len(t) as f64).collect();
    let snippets: Vec<f64> = serps
        .iter()
        .flat_map(|s| s.snippets())
        .map(|t| whitespace_len(t) as f64)
        .collect();
    let per_query: Vec<f64> = serps.iter().map(|s| s.len() as f64).collect();
    Ok(CorpusStats {
        records: records.len(),
        query_length: FieldSummary::from_values(&query).expect("non-empty"),
        question_length: FieldSummary::from_values(&question).expect("non-empty"),
        answers_per_query: FieldSummary::from_values(&answers).expect("non-empty"),
        title_length: FieldSummary::from_values(&titles),
        snippet_length: FieldSummary::from_values(&snippets),
        results_per_query: FieldSummary::from_values(&per_query),
    })
}
