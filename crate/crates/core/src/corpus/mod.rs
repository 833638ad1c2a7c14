//! Clarification records, SERPs and the in-memory corpus.
//!
//! A [`Corpus`] is built once (from a click log, a cache file or the synthetic generator)
//! and is immutable afterwards. Filtering and splitting produce new corpora that carry the
//! provenance of their parent.

mod cache;
mod click_log;
mod serp;
mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::Fingerprint;

pub use cache::{read_cache, write_cache, CorpusCache, CACHE_FORMAT_VERSION};
pub use click_log::{parse_click_log, ColumnMapping, ParseReport, RejectReason, Rejection};
pub use serp::{parse_serp_dump, serp_line, SerpDump, SerpParseReport};
pub use stats::{compute_stats, whitespace_len, CorpusStats, FieldSummary};

pub const MIN_ANSWERS: usize = 2;
pub const MAX_ANSWERS: usize = 5;
pub const MAX_RESULTS: usize = 10;
pub const MAX_ENGAGEMENT: u8 = 10;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing header row")]
    MissingHeader { path: PathBuf },
    #[error("{path}: column `{column}` not found in header")]
    MissingColumn { path: PathBuf, column: String },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid split fraction {0}; expected 0 < fraction < 1")]
    InvalidFraction(f64),
    #[error("corpus cache {path}: {reason}")]
    Cache { path: PathBuf, reason: String },
}

/// How often a clarification pane was shown for its query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Impression {
    Low,
    Medium,
    High,
}

impl Impression {
    pub const ALL: [Impression; 3] = [Impression::Low, Impression::Medium, Impression::High];

    pub fn as_str(self) -> &'static str {
        match self {
            Impression::Low => "low",
            Impression::Medium => "medium",
            Impression::High => "high",
        }
    }
}

impl fmt::Display for Impression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Impression {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(Impression::Low),
            "medium" => Ok(Impression::Medium),
            "high" => Ok(Impression::High),
            other => Err(format!("unknown impression level `{other}`")),
        }
    }
}

/// One retrieved result. Title and snippet may be empty; the url may not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerpResult {
    pub title: String,
    pub url: String,
    pub snippet: String,
}

/// The ranked result list for one query, at most [`MAX_RESULTS`] long.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Serp {
    pub results: Vec<SerpResult>,
}

impl Serp {
    pub fn new(mut results: Vec<SerpResult>) -> Self {
        results.truncate(MAX_RESULTS);
        Self { results }
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    pub fn titles(&self) -> impl Iterator<Item = &str> {
        self.results.iter().map(|r| r.title.as_str())
    }

    pub fn snippets(&self) -> impl Iterator<Item = &str> {
        self.results.iter().map(|r| r.snippet.as_str())
    }
}

/// One query with its clarification pane and engagement labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarificationRecord {
    pub query: String,
    pub question: String,
    pub answers: Vec<String>,
    pub impression: Impression,
    pub engagement: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_click_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub serp: Option<Serp>,
}

impl ClarificationRecord {
    /// Checks the record invariants.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let n = self.answers.len();
        if !(MIN_ANSWERS..=MAX_ANSWERS).contains(&n) {
            return Err(CorpusError::InvalidRecord(format!(
                "{n} answers; expected {MIN_ANSWERS}..={MAX_ANSWERS}"
            )));
        }
        if self.engagement > MAX_ENGAGEMENT {
            return Err(CorpusError::InvalidRecord(format!(
                "engagement {} outside 0..=10",
                self.engagement
            )));
        }
        if let Some(probs) = &self.answer_click_probs {
            if probs.len() != n {
                return Err(CorpusError::InvalidRecord(format!(
                    "{} click probabilities for {n} answers",
                    probs.len()
                )));
            }
            if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(CorpusError::InvalidRecord(format!(
                    "click probability {p} outside [0,1]"
                )));
            }
        }
        if let Some(serp) = &self.serp {
            if serp.results.len() > MAX_RESULTS {
                return Err(CorpusError::InvalidRecord(format!(
                    "{} results; at most {MAX_RESULTS} allowed",
                    serp.results.len()
                )));
            }
            if serp.results.iter().any(|r| r.url.is_empty()) {
                return Err(CorpusError::InvalidRecord("result with empty url".into()));
            }
        }
        Ok(())
    }

    pub fn engagement_f64(&self) -> f64 {
        f64::from(self.engagement)
    }
}

/// Where a source file came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinStats {
    pub matched: usize,
    pub unmatched: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<SourceFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse: Option<ParseReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub serp_parse: Option<SerpParseReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub join: Option<JoinStats>,
    /// Derivation steps applied after ingestion, e.g. `el-only` or `split(test,seed=7)`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub derived: Vec<String>,
}

/// Options for attaching SERPs to records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinOptions {
    /// Match queries after Unicode lowercasing instead of exactly.
    pub case_fold: bool,
}

/// An immutable set of clarification records.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    records: Vec<ClarificationRecord>,
    provenance: Provenance,
    multi_pane_index: BTreeMap<String, Vec<usize>>,
}

impl Corpus {
    /// Builds a corpus, validating every record. Fails on an empty record list.
    pub fn new(records: Vec<ClarificationRecord>, provenance: Provenance) -> Result<Self, CorpusError> {
        if records.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        for r in &records {
            r.validate()?;
        }
        let multi_pane_index = build_pane_index(&records);
        Ok(Self {
            records,
            provenance,
            multi_pane_index,
        })
    }

    pub fn records(&self) -> &[ClarificationRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ClarificationRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Query → indices of the records (panes) for that query, in corpus order.
    pub fn multi_pane_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.multi_pane_index
    }

    /// Queries that have at least two panes.
    pub fn multi_pane_queries(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.multi_pane_index
            .iter()
            .filter(|(_, v)| v.len() >= 2)
            .map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn labels(&self) -> Vec<f64> {
        self.records.iter().map(ClarificationRecord::engagement_f64).collect()
    }

    /// Content fingerprint over every record field, independent of provenance.
    pub fn content_hash(&self) -> String {
        records_hash(&self.records)
    }

    fn derive(&self, records: Vec<ClarificationRecord>, step: String) -> Result<Self, CorpusError> {
        let mut provenance = self.provenance.clone();
        provenance.derived.push(step);
        Self::new(records, provenance)
    }

    /// Attaches each record's SERP by query. Unmatched records keep `serp = None`.
    pub fn join(&self, serps: &SerpDump, options: JoinOptions) -> Corpus {
        let folded: Option<BTreeMap<String, &Serp>> = options.case_fold.then(|| {
            let mut m = BTreeMap::new();
            for (q, s) in serps.iter() {
                m.entry(q.to_lowercase()).or_insert(s);
            }
            m
        });
        let mut stats = JoinStats::default();
        let records = self
            .records
            .iter()
            .map(|r| {
                let hit = match &folded {
                    Some(m) => m.get(&r.query.to_lowercase()).copied(),
                    None => serps.get(&r.query),
                };
                let mut r = r.clone();
                match hit {
                    Some(s) => {
                        stats.matched += 1;
                        r.serp = Some(s.clone());
                    }
                    None => stats.unmatched += 1,
                }
                r
            })
            .collect::<Vec<_>>();
        let mut provenance = self.provenance.clone();
        provenance.join = Some(stats);
        Corpus {
            multi_pane_index: self.multi_pane_index.clone(),
            records,
            provenance,
        }
    }

    /// Records with engagement strictly greater than zero.
    pub fn filter_el_only(&self) -> Result<Corpus, CorpusError> {
        let kept = self.records.iter().filter(|r| r.engagement > 0).cloned().collect();
        self.derive(kept, "el-only".into())
    }

    /// Records that carry a SERP.
    pub fn filter_with_serp(&self) -> Result<Corpus, CorpusError> {
        let kept = self.records.iter().filter(|r| r.serp.is_some()).cloned().collect();
        self.derive(kept, "with-serp".into())
    }

    /// Records at the given indices, in the given order.
    pub fn subset(&self, indices: &[usize], label: &str) -> Result<Corpus, CorpusError> {
        let kept = indices.iter().map(|&i| self.records[i].clone()).collect();
        self.derive(kept, label.to_string())
    }

    /// Seeded train/test partition. The test side holds `round(n * test_fraction)` records,
    /// clamped so both sides are non-empty.
    pub fn holdout_split(&self, test_fraction: f64, seed: u64) -> Result<(Corpus, Corpus), CorpusError> {
        let (train_idx, test_idx) = holdout_indices(self.len(), test_fraction, seed)?;
        let train = self.subset(&train_idx, &format!("split(train,fraction={test_fraction},seed={seed})"))?;
        let test = self.subset(&test_idx, &format!("split(test,fraction={test_fraction},seed={seed})"))?;
        Ok((train, test))
    }
}

/// Index form of [`Corpus::holdout_split`]: sorted train and test indices.
pub fn holdout_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(test_fraction));
    }
    if n < 2 {
        return Err(CorpusError::EmptyCorpus);
    }
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let n_test = n_test.clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test: Vec<usize> = order[..n_test].to_vec();
    let mut train: Vec<usize> = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

fn build_pane_index(records: &[ClarificationRecord]) -> BTreeMap<String, Vec<usize>> {
    let mut index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        index.entry(r.query.clone()).or_default().push(i);
    }
    index
}

pub(crate) fn records_hash(records: &[ClarificationRecord]) -> String {
    let mut fp = Fingerprint::new();
    fp.num(records.len() as u64);
    for r in records {
        fp.field(&r.query);
        fp.field(&r.question);
        fp.num(r.answers.len() as u64);
        for a in &r.answers {
            fp.field(a);
        }
        fp.field(r.impression.as_str());
        fp.num(u64::from(r.engagement));
        match &r.answer_click_probs {
            Some(p) => {
                fp.num(p.len() as u64 + 1);
                for v in p {
                    fp.num(v.to_bits());
                }
            }
            None => fp.num(0),
        }
        match &r.serp {
            Some(s) => {
                fp.num(s.results.len() as u64 + 1);
                for res in &s.results {
                    fp.field(&res.title);
                    fp.field(&res.url);
                    fp.field(&res.snippet);
                }
            }
            None => fp.num(0),
        }
    }
    fp.finish()
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn el_only_keeps_positive_engagement() {
        let c = corpus(&[0, 0, 3, 7, 0]);
        let el = c.filter_el_only().unwrap();
        assert_eq!(el.len(), 2);
        assert!(el.records().iter().all(|r| r.engagement > 0));
        assert_eq!(el.provenance().derived, vec!["el-only".to_string()]);
    }

    #[test]
    fn el_only_on_all_zero_is_empty() {
        let c = corpus(&[0, 0, 0]);
        assert!(matches!(c.filter_el_only(), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn el_only_is_idempotent() {
        let c = corpus(&[0, 1, 2, 0, 9, 10]);
        let once = c.filter_el_only().unwrap();
        let twice = once.filter_el_only().unwrap();
        assert_eq!(once.records(), twice.records());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = corpus(&vec![1; 100]);
        let (tr, te) = c.holdout_split(0.2, 7).unwrap();
        assert_eq!((tr.len(), te.len()), (80, 20));
        let (tr2, te2) = c.holdout_split(0.2, 7).unwrap();
        assert_eq!(tr.records(), tr2.records());
        assert_eq!(te.records(), te2.records());

        let small = corpus(&[1, 2, 3, 4, 5]);
        let (tr, te) = small.holdout_split(0.2, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (4, 1));
    }

    #[test]
    fn different_seeds_give_different_test_sets() {
        let (_, a) = holdout_indices(100, 0.2, 7).unwrap();
        let (_, b) = holdout_indices(100, 0.2, 8).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let c = corpus(&[1, 2, 3]);
        assert!(matches!(c.holdout_split(0.0, 1), Err(CorpusError::InvalidFraction(_))));
        assert!(matches!(c.holdout_split(1.0, 1), Err(CorpusError::InvalidFraction(_))));
    }

    #[test]
    fn join_attaches_matching_serps() {
        let c = corpus(&[1, 2, 3]);
        let mut dump = SerpDump::default();
        dump.insert("query 0".into(), serp(&["a"]));
        dump.insert("query 2".into(), serp(&["b", "c"]));
        let j = c.join(&dump, JoinOptions::default());
        let attached = j.records().iter().filter(|r| r.serp.is_some()).count();
        assert_eq!(attached, 2);
        assert!(j.records()[1].serp.is_none());
        assert_eq!(j.provenance().join, Some(JoinStats { matched: 2, unmatched: 1 }));
    }

    #[test]
    fn join_with_empty_dump_is_identity_on_records() {
        let c = corpus(&[1, 2, 3]);
        let j = c.join(&SerpDump::default(), JoinOptions::default());
        assert_eq!(j.records(), c.records());
    }

    #[test]
    fn join_duplicate_queries_share_serp() {
        let records = vec![record("dup", 1), record("dup", 2), record("other", 0)];
        let c = Corpus::new(records, Provenance::default()).unwrap();
        let mut dump = SerpDump::default();
        dump.insert("dup".into(), serp(&["x", "y"]));
        let j = c.join(&dump, JoinOptions::default());
        assert_eq!(j.records()[0].serp, j.records()[1].serp);
        assert!(j.records()[0].serp.is_some());
        assert_eq!(c.multi_pane_index()["dup"], vec![0, 1]);
    }

    #[test]
    fn join_case_folding_is_opt_in() {
        let c = Corpus::new(vec![record("Red Dress", 1)], Provenance::default()).unwrap();
        let mut dump = SerpDump::default();
        dump.insert("red dress".into(), serp(&["a"]));
        assert!(c.join(&dump, JoinOptions::default()).records()[0].serp.is_none());
        let folded = c.join(&dump, JoinOptions { case_fold: true });
        assert!(folded.records()[0].serp.is_some());
    }

    #[test]
    fn pane_index_covers_every_record_once() {
        let records = vec![record("a", 1), record("b", 2), record("a", 3), record("c", 0)];
        let c = Corpus::new(records, Provenance::default()).unwrap();
        let mut seen: Vec<usize> = c.multi_pane_index().values().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        let multi: Vec<_> = c.multi_pane_queries().map(|(q, _)| q.to_string()).collect();
        assert_eq!(multi, vec!["a".to_string()]);
    }

    #[test]
    fn validate_rejects_bad_records() {
        let mut r = record("q", 3);
        r.answers = vec!["only".into()];
        assert!(r.validate().is_err());
        let mut r = record("q", 11);
        r.answers = vec!["a".into(), "b".into()];
        assert!(r.validate().is_err());
        let mut r = record("q", 1);
        r.answer_click_probs = Some(vec![0.5, 1.5]);
        assert!(r.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn split_is_a_partition(n in 2usize..300, frac in 0.05f64..0.95, seed in 0u64..1000) {
            let (train, test) = holdout_indices(n, frac, seed).unwrap();
            let all: BTreeSet<usize> = train.iter().chain(test.iter()).copied().collect();
            proptest::prop_assert_eq!(all.len(), n);
            proptest::prop_assert_eq!(train.len() + test.len(), n);
            let exact = n as f64 * frac;
            proptest::prop_assert!((test.len() as f64 - exact).abs() <= 1.0);
        }
    }
}
