//! Versioned JSON container for a parsed corpus.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClarificationRecord, Corpus, CorpusError, Provenance};

pub const CACHE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusCache {
    pub format_version: u32,
    pub content_hash: String,
    pub provenance: Provenance,
    pub records: Vec<ClarificationRecord>,
}

impl CorpusCache {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        Self {
            format_version: CACHE_FORMAT_VERSION,
            content_hash: corpus.content_hash(),
            provenance: corpus.provenance().clone(),
            records: corpus.records().to_vec(),
        }
    }

    pub fn into_corpus(self, path: &Path) -> Result<Corpus, CorpusError> {
        if self.format_version != CACHE_FORMAT_VERSION {
            return Err(CorpusError::Cache {
                path: path.to_path_buf(),
                reason: format!(
                    "format version {} (expected {CACHE_FORMAT_VERSION})",
                    self.format_version
                ),
            });
        }
        let corpus = Corpus::new(self.records, self.provenance)?;
        if corpus.content_hash() != self.content_hash {
            return Err(CorpusError::Cache {
                path: path.to_path_buf(),
                reason: "content hash mismatch".into(),
            });
        }
        Ok(corpus)
    }
}

pub fn write_cache(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let json = serde_json::to_vec(&CorpusCache::from_corpus(corpus)).expect("corpus serialises");
    std::fs::write(path, json).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_cache(path: &Path) -> Result<Corpus, CorpusError> {
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cache: CorpusCache = serde_json::from_slice(&bytes).map_err(|e| CorpusError::Cache {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    cache.into_corpus(path)
}

#[cfg(test)]
mod tests {
    use super::super::{Impression, Serp, SerpResult};
    use super::*;
    use proptest::prelude::*;

    fn arb_text() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 \\t\"'é]{0,12}"
    }

    fn arb_record() -> impl Strategy<Value = ClarificationRecord> {
        (
            arb_text(),
            arb_text(),
            proptest::collection::vec("[a-z]{1,6}", 2..=5),
            0u8..=10,
            prop_oneof![Just(Impression::Low), Just(Impression::Medium), Just(Impression::High)],
            proptest::option::of(proptest::collection::vec((arb_text(), "[a-z]{1,8}", arb_text()), 0..=10)),
            any::<bool>(),
        )
            .prop_map(|(query, question, answers, engagement, impression, serp, probs)| {
                let answer_click_probs = probs.then(|| answers.iter().enumerate().map(|(i, _)| 0.1 * i as f64).collect());
                ClarificationRecord {
                    query,
                    question,
                    answers,
                    impression,
                    engagement,
                    answer_click_probs,
                    serp: serp.map(|rs| {
                        Serp::new(
                            rs.into_iter()
                                .map(|(title, url, snippet)| SerpResult { title, url, snippet })
                                .collect(),
                        )
                    }),
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn cache_round_trips(records in proptest::collection::vec(arb_record(), 1..8)) {
            let corpus = Corpus::new(records, Provenance::default()).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("corpus.json");
            write_cache(&corpus, &path).unwrap();
            let back = read_cache(&path).unwrap();
            prop_assert_eq!(back.records(), corpus.records());
        }
    }

    #[test]
    fn rejects_other_versions() {
        let corpus = crate::corpus::fixtures::corpus(&[1, 2]);
        let mut cache = CorpusCache::from_corpus(&corpus);
        cache.format_version = 99;
        let err = cache.into_corpus(Path::new("x.json")).unwrap_err();
        assert!(err.to_string().contains("format version 99"));
    }
}
