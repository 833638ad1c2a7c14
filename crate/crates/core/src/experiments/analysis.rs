//! Error analyses over record buckets: impression level, query length, answer coverage and
//! snippet noun diversity.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::report::{fmt_metric, Table};
use super::ExperimentError;
use crate::corpus::{whitespace_len, ClarificationRecord, Impression, Serp};
use crate::featurize::analyze;
use crate::metrics::{group_comparison, per_sample_losses, regression_scores, LossKind, RegressionScores, SignificanceResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketAxis {
    Impression,
    QueryLength,
    Coverage,
    Diversity,
}

impl fmt::Display for BucketAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BucketAxis::Impression => "impression",
            BucketAxis::QueryLength => "query_length",
            BucketAxis::Coverage => "coverage",
            BucketAxis::Diversity => "diversity",
        })
    }
}

impl std::str::FromStr for BucketAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "impression" => Ok(BucketAxis::Impression),
            "query_length" | "query-length" => Ok(BucketAxis::QueryLength),
            "coverage" => Ok(BucketAxis::Coverage),
            "diversity" => Ok(BucketAxis::Diversity),
            other => Err(format!("unknown analysis axis `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BucketOptions {
    /// Whitespace-token query lengths with their own bucket; longer queries share a final
    /// `N+` bucket, where N is one past the largest listed length.
    pub query_lengths: Vec<usize>,
    pub diversity_bin_width: f64,
    /// Per-sample loss compared between a bucket and the rest of the records.
    pub loss: LossKind,
}

impl Default for BucketOptions {
    fn default() -> Self {
        Self {
            query_lengths: vec![1, 2, 3, 4],
            diversity_bin_width: 0.2,
            loss: LossKind::Squared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub key: String,
    pub n: usize,
    pub scores: Option<RegressionScores>,
    pub mean_label: Option<f64>,
    pub mean_prediction: Option<f64>,
    /// Welch test of this bucket's per-sample losses against all other records'.
    pub vs_rest: Option<SignificanceResult>,
}

/// Welch test between two named groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub a: String,
    pub b: String,
    pub result: SignificanceResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBucketReport {
    pub axis: BucketAxis,
    pub n_records: usize,
    /// Every record falls in exactly one bucket; sizes sum to `n_records`.
    pub buckets: Vec<BucketStats>,
    /// Coverage: engagement-label comparisons between groups.
    pub comparisons: Vec<GroupComparison>,
    /// Diversity: Pearson correlation of unique-noun ratio with engagement, over records
    /// that have a ratio.
    pub correlation: Option<f64>,
    /// Empty buckets and skipped tests.
    pub notes: Vec<String>,
}

impl AnalysisBucketReport {
    pub fn bucket(&self, key: &str) -> Option<&BucketStats> {
        self.buckets.iter().find(|b| b.key == key)
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(
            &format!("analysis by {}", self.axis),
            &["bucket", "n", "mae", "mse", "r2", "mean_label", "mean_prediction", "p_vs_rest"],
        );
        t.meta("records", self.n_records);
        if let Some(c) = self.correlation {
            t.meta("noun_ratio_engagement_correlation", fmt_metric(c));
        }
        for c in &self.comparisons {
            t.meta(
                &format!("welch {} vs {}", c.a, c.b),
                format!(
                    "mean_a={} mean_b={} p={}",
                    fmt_metric(c.result.mean_a),
                    fmt_metric(c.result.mean_b),
                    fmt_metric(c.result.p_value)
                ),
            );
        }
        for n in &self.notes {
            t.meta("note", n);
        }
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), fmt_metric);
        for b in &self.buckets {
            t.push(vec![
                b.key.clone(),
                b.n.to_string(),
                opt(b.scores.as_ref().map(|s| s.mae)),
                opt(b.scores.as_ref().map(|s| s.mse)),
                opt(b.scores.as_ref().map(|s| s.r2)),
                opt(b.mean_label),
                opt(b.mean_prediction),
                opt(b.vs_rest.as_ref().map(|r| r.p_value)),
            ]);
        }
        t
    }
}

/// Whether a pane's answers appear in its SERP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coverage {
    All,
    Some,
    None,
    NoSerp,
}

impl Coverage {
    pub fn as_str(self) -> &'static str {
        match self {
            Coverage::All => "all",
            Coverage::Some => "some",
            Coverage::None => "none",
            Coverage::NoSerp => "no-serp",
        }
    }
}

/// An answer is present when its case-folded text is a substring of some result's
/// case-folded `title + " " + snippet`.
pub fn answer_coverage(record: &ClarificationRecord) -> Coverage {
    let Some(serp) = &record.serp else {
        return Coverage::NoSerp;
    };
    let texts: Vec<String> = serp
        .results
        .iter()
        .map(|r| format!("{} {}", r.title, r.snippet).to_lowercase())
        .collect();
    let present = record
        .answers
        .iter()
        .filter(|a| {
            let a = a.to_lowercase();
            texts.iter().any(|t| t.contains(&a))
        })
        .count();
    match present {
        0 => Coverage::None,
        p if p == record.answers.len() => Coverage::All,
        _ => Coverage::Some,
    }
}

/// A part-of-speech function reduced to what the diversity analysis needs.
pub trait PosTagger: Send + Sync {
    /// One flag per token: true for nouns.
    fn nouns(&self, tokens: &[String]) -> Vec<bool>;
}

/// Approximate tagger: closed-class stoplist plus suffix rules.
///
/// Tokens in the stoplist, purely numeric tokens, single characters, and words ending in
/// typical adverb, verb or adjective suffixes are non-nouns; everything else is a noun. This
/// is a rough stand-in for a trained tagger, good enough for qualitative correlations.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicTagger;

const STOPLIST: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every", "no", "all", "both", "my",
    "your", "his", "her", "its", "our", "their", "i", "you", "he", "she", "it", "we", "they", "me", "him", "us",
    "them", "who", "whom", "whose", "which", "what", "where", "when", "why", "how", "and", "or", "but", "nor", "so",
    "yet", "if", "then", "than", "because", "while", "of", "in", "on", "at", "by", "for", "with", "about", "to",
    "from", "into", "onto", "over", "under", "after", "before", "between", "through", "during", "without", "within",
    "up", "down", "out", "off", "as", "is", "are", "was", "were", "be", "been", "being", "am", "do", "does", "did",
    "have", "has", "had", "can", "could", "will", "would", "shall", "should", "may", "might", "must", "not", "very",
    "too", "also", "just", "only", "more", "most", "less", "many", "much", "few", "other", "such", "own", "same",
    "new", "good", "best", "free", "here", "there", "now", "get", "make", "find", "see", "use", "one", "two",
];

const NON_NOUN_SUFFIXES: &[&str] = &[
    "ly", "ing", "ed", "ous", "ful", "ive", "able", "ible", "less", "ical", "ish", "est",
];

impl PosTagger for HeuristicTagger {
    fn nouns(&self, tokens: &[String]) -> Vec<bool> {
        tokens
            .iter()
            .map(|t| {
                let t = t.to_lowercase();
                !(t.chars().count() < 2
                    || t.chars().all(|c| c.is_numeric())
                    || STOPLIST.contains(&t.as_str())
                    || NON_NOUN_SUFFIXES.iter().any(|s| t.len() > s.len() + 2 && t.ends_with(s)))
            })
            .collect()
    }
}

/// Suffix-stripping stemmer for plurals: `sses → ss`, `ies → y`, and a final `s` is dropped
/// unless preceded by `s`, `u` or `i`. Words of three characters or fewer are unchanged.
pub fn stem(word: &str) -> String {
    let w = word.to_lowercase();
    if w.chars().count() <= 3 {
        return w;
    }
    if let Some(base) = w.strip_suffix("sses") {
        return format!("{base}ss");
    }
    if let Some(base) = w.strip_suffix("ies") {
        return format!("{base}y");
    }
    if w.ends_with('s') && !(w.ends_with("ss") || w.ends_with("us") || w.ends_with("is")) {
        return w[..w.len() - 1].to_string();
    }
    w
}

/// Unique stemmed nouns over total nouns across all snippets. `None` when there are no
/// nouns.
pub fn unique_noun_ratio(serp: &Serp, tagger: &dyn PosTagger) -> Option<f64> {
    let mut total = 0usize;
    let mut unique = BTreeSet::new();
    for snippet in serp.snippets() {
        let tokens = analyze(snippet, true);
        for (t, noun) in tokens.iter().zip(tagger.nouns(&tokens)) {
            if noun {
                total += 1;
                unique.insert(stem(t));
            }
        }
    }
    (total > 0).then(|| unique.len() as f64 / total as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// [`analyze_by_bucket_with`] using [`HeuristicTagger`].
pub fn analyze_by_bucket(
    predictions: &[f64],
    records: &[ClarificationRecord],
    axis: BucketAxis,
    options: &BucketOptions,
) -> Result<AnalysisBucketReport, ExperimentError> {
    analyze_by_bucket_with(predictions, records, axis, options, &HeuristicTagger)
}

/// Groups records along `axis` and scores `predictions` per group.
///
/// Bucket keys:
/// * impression: `low`, `medium`, `high`
/// * query length: each listed length, then `N+`
/// * coverage: `all`, `some`, `none`, `no-serp`
/// * diversity: half-open bins of the unique-noun ratio such as `[0.0,0.2)` (the last bin is
///   closed), then `n/a` for records without a SERP or without nouns
///
/// Empty buckets stay in the report with `n = 0` and a note.
pub fn analyze_by_bucket_with(
    predictions: &[f64],
    records: &[ClarificationRecord],
    axis: BucketAxis,
    options: &BucketOptions,
    tagger: &dyn PosTagger,
) -> Result<AnalysisBucketReport, ExperimentError> {
    if predictions.len() != records.len() {
        return Err(crate::metrics::MetricsError::LengthMismatch(records.len(), predictions.len()).into());
    }
    let labels: Vec<f64> = records.iter().map(ClarificationRecord::engagement_f64).collect();
    let mut notes = Vec::new();
    let mut correlation = None;
    let (keys, assign): (Vec<String>, Vec<usize>) = match axis {
        BucketAxis::Impression => (
            Impression::ALL.iter().map(|i| i.as_str().to_string()).collect(),
            records
                .iter()
                .map(|r| Impression::ALL.iter().position(|&i| i == r.impression).expect("known level"))
                .collect(),
        ),
        BucketAxis::QueryLength => {
            let mut lengths = options.query_lengths.clone();
            lengths.sort_unstable();
            lengths.dedup();
            let tail = lengths.last().map_or(1, |l| l + 1);
            let mut keys: Vec<String> = lengths.iter().map(usize::to_string).collect();
            keys.push(format!("{tail}+"));
            let assign = records
                .iter()
                .map(|r| {
                    let n = whitespace_len(&r.query);
                    lengths.iter().position(|&l| l == n).unwrap_or(if n >= tail {
                        lengths.len()
                    } else {
                        // Lengths below or between the listed ones join the nearest larger bucket.
                        lengths.iter().position(|&l| l > n).unwrap_or(lengths.len())
                    })
                })
                .collect();
            (keys, assign)
        }
        BucketAxis::Coverage => {
            let order = [Coverage::All, Coverage::Some, Coverage::None, Coverage::NoSerp];
            (
                order.iter().map(|c| c.as_str().to_string()).collect(),
                records
                    .iter()
                    .map(|r| order.iter().position(|&c| c == answer_coverage(r)).expect("known group"))
                    .collect(),
            )
        }
        BucketAxis::Diversity => {
            let w = options.diversity_bin_width;
            if !(w > 0.0 && w <= 1.0) {
                return Err(ExperimentError::InvalidSpec(format!("diversity_bin_width must be in (0, 1], got {w}")));
            }
            let bins = (1.0 / w).ceil() as usize;
            let mut keys: Vec<String> = (0..bins)
                .map(|b| {
                    let hi = ((b + 1) as f64 * w).min(1.0);
                    let close = if b + 1 == bins { ']' } else { ')' };
                    format!("[{:.1},{:.1}{close}", b as f64 * w, hi)
                })
                .collect();
            keys.push("n/a".into());
            let ratios: Vec<Option<f64>> = records
                .iter()
                .map(|r| r.serp.as_ref().and_then(|s| unique_noun_ratio(s, tagger)))
                .collect();
            let (xs, ys): (Vec<f64>, Vec<f64>) = ratios
                .iter()
                .zip(&labels)
                .filter_map(|(r, &y)| r.map(|r| (r, y)))
                .unzip();
            correlation = pearson(&xs, &ys);
            let assign = ratios
                .iter()
                .map(|r| match r {
                    // The epsilon keeps exact multiples of the width in the upper bin.
                    Some(r) => ((r / w + 1e-9).floor() as usize).min(bins - 1),
                    None => bins,
                })
                .collect();
            (keys, assign)
        }
    };
    let losses = per_sample_losses_or_empty(&labels, predictions, options.loss)?;
    let mut buckets = Vec::with_capacity(keys.len());
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); keys.len()];
    for (i, &b) in assign.iter().enumerate() {
        members[b].push(i);
    }
    for (key, idx) in keys.iter().zip(&members) {
        if idx.is_empty() {
            notes.push(format!("bucket `{key}` is empty"));
            buckets.push(BucketStats {
                key: key.clone(),
                n: 0,
                scores: None,
                mean_label: None,
                mean_prediction: None,
                vs_rest: None,
            });
            continue;
        }
        let y: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
        let p: Vec<f64> = idx.iter().map(|&i| predictions[i]).collect();
        let inside: BTreeSet<usize> = idx.iter().copied().collect();
        let l_in: Vec<f64> = idx.iter().map(|&i| losses[i]).collect();
        let l_out: Vec<f64> = (0..records.len()).filter(|i| !inside.contains(i)).map(|i| losses[i]).collect();
        let vs_rest = if l_in.len() >= 2 && l_out.len() >= 2 {
            Some(group_comparison(&l_in, &l_out)?)
        } else {
            None
        };
        buckets.push(BucketStats {
            key: key.clone(),
            n: idx.len(),
            scores: Some(regression_scores(&y, &p)?),
            mean_label: Some(mean(&y)),
            mean_prediction: Some(mean(&p)),
            vs_rest,
        });
    }
    let mut comparisons = Vec::new();
    if axis == BucketAxis::Coverage {
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let ya: Vec<f64> = members[a].iter().map(|&i| labels[i]).collect();
            let yb: Vec<f64> = members[b].iter().map(|&i| labels[i]).collect();
            if ya.len() >= 2 && yb.len() >= 2 {
                comparisons.push(GroupComparison {
                    a: keys[a].clone(),
                    b: keys[b].clone(),
                    result: group_comparison(&ya, &yb)?,
                });
            } else {
                notes.push(format!("{} vs {}: too few records to test", keys[a], keys[b]));
            }
        }
    }
    Ok(AnalysisBucketReport {
        axis,
        n_records: records.len(),
        buckets,
        comparisons,
        correlation,
        notes,
    })
}

fn per_sample_losses_or_empty(y: &[f64], p: &[f64], kind: LossKind) -> Result<Vec<f64>, ExperimentError> {
    if y.is_empty() {
        return Ok(Vec::new());
    }
    Ok(per_sample_losses(y, p, kind)?)
}
