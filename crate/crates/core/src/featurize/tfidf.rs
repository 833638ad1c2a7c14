//! Bag-of-words vocabulary and tf-idf weighting.
//!
//! `idf(t) = ln((1 + N) / (1 + df(t))) + 1` and each vector is L2-normalised.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{analyze, compose_input, FeaturizeError, InputSetting, ModelInput};
use crate::corpus::ClarificationRecord;
use crate::hashing::Fingerprint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabularyOptions {
    pub lowercase: bool,
    pub min_df: usize,
    pub max_features: Option<usize>,
}

impl Default for VocabularyOptions {
    fn default() -> Self {
        Self {
            lowercase: true,
            min_df: 1,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyData", into = "VocabularyData")]
pub struct Vocabulary {
    terms: Vec<String>,
    df: Vec<u32>,
    n_docs: usize,
    lowercase: bool,
    fitted_hash: String,
    index: HashMap<String, u32>,
}

#[derive(Clone, Serialize, Deserialize)]
struct VocabularyData {
    terms: Vec<String>,
    df: Vec<u32>,
    n_docs: usize,
    lowercase: bool,
    fitted_hash: String,
}

impl From<VocabularyData> for Vocabulary {
    fn from(d: VocabularyData) -> Self {
        Vocabulary::from_parts(d.terms, d.df, d.n_docs, d.lowercase, d.fitted_hash)
    }
}

impl From<Vocabulary> for VocabularyData {
    fn from(v: Vocabulary) -> Self {
        VocabularyData {
            terms: v.terms,
            df: v.df,
            n_docs: v.n_docs,
            lowercase: v.lowercase,
            fitted_hash: v.fitted_hash,
        }
    }
}

/// Sparse tf-idf vector: `(term index, weight)` pairs sorted by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowVector {
    pub entries: Vec<(u32, f64)>,
    pub vocab_hash: String,
}

impl BowVector {
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }
}

impl Vocabulary {
    fn from_parts(terms: Vec<String>, df: Vec<u32>, n_docs: usize, lowercase: bool, fitted_hash: String) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self {
            terms,
            df,
            n_docs,
            lowercase,
            fitted_hash,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn index_of(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn df(&self, index: u32) -> u32 {
        self.df[index as usize]
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    /// Fingerprint of the fitting documents.
    pub fn fitted_hash(&self) -> &str {
        &self.fitted_hash
    }

    /// Fingerprint of the vocabulary content (terms, df, document count).
    pub fn content_hash(&self) -> String {
        let mut fp = Fingerprint::new();
        fp.num(self.n_docs as u64);
        fp.num(u64::from(self.lowercase));
        for (t, d) in self.terms.iter().zip(&self.df) {
            fp.field(t);
            fp.num(u64::from(*d));
        }
        fp.finish()
    }

    pub fn idf(&self, index: u32) -> f64 {
        let n = self.n_docs as f64;
        ((1.0 + n) / (1.0 + f64::from(self.df[index as usize]))).ln() + 1.0
    }

    /// Audit artifact: a short header, then one `term<TAB>index<TAB>df` line per term.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# elp-vocabulary v1\n");
        let _ = writeln!(out, "# n_docs\t{}", self.n_docs);
        let _ = writeln!(out, "# lowercase\t{}", self.lowercase);
        let _ = writeln!(out, "# fitted_hash\t{}", self.fitted_hash);
        for (i, (t, d)) in self.terms.iter().zip(&self.df).enumerate() {
            let _ = writeln!(out, "{t}\t{i}\t{d}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, FeaturizeError> {
        let bad = |m: String| FeaturizeError::VocabularyFormat(m);
        let mut lines = text.lines();
        if lines.next() != Some("# elp-vocabulary v1") {
            return Err(bad("missing `# elp-vocabulary v1` header".into()));
        }
        let mut header = BTreeMap::new();
        let mut terms = Vec::new();
        let mut df = Vec::new();
        for line in lines {
            if let Some(rest) = line.strip_prefix("# ") {
                let (k, v) = rest.split_once('\t').ok_or_else(|| bad(format!("bad header line `{line}`")))?;
                header.insert(k.to_string(), v.to_string());
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(bad(format!("bad term line `{line}`")));
            }
            let idx: usize = parts[1].parse().map_err(|_| bad(format!("bad index in `{line}`")))?;
            if idx != terms.len() {
                return Err(bad(format!("index {idx} out of sequence")));
            }
            let d: u32 = parts[2].parse().map_err(|_| bad(format!("bad df in `{line}`")))?;
            terms.push(parts[0].to_string());
            df.push(d);
        }
        let get = |k: &str| header.get(k).cloned().ok_or_else(|| bad(format!("missing header `{k}`")));
        let n_docs = get("n_docs")?.parse().map_err(|_| bad("bad n_docs".into()))?;
        let lowercase = get("lowercase")?.parse().map_err(|_| bad("bad lowercase".into()))?;
        let fitted_hash = get("fitted_hash")?;
        Ok(Self::from_parts(terms, df, n_docs, lowercase, fitted_hash))
    }

    pub(crate) fn transform_tokens(&self, tokens: &[String], vocab_hash: &str) -> BowVector {
        let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
        for t in tokens {
            if let Some(i) = self.index_of(t) {
                *tf.entry(i).or_insert(0.0) += 1.0;
            }
        }
        let mut entries: Vec<(u32, f64)> = tf.into_iter().map(|(i, c)| (i, c * self.idf(i))).collect();
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            for e in &mut entries {
                e.1 /= norm;
            }
        }
        BowVector {
            entries,
            vocab_hash: vocab_hash.to_string(),
        }
    }
}

/// Fits a vocabulary on pre-tokenised documents.
pub(crate) fn fit_on_tokens(docs: &[Vec<String>], options: &VocabularyOptions) -> Result<Vocabulary, FeaturizeError> {
    if docs.is_empty() {
        return Err(FeaturizeError::EmptyCorpus);
    }
    let mut df: HashMap<&str, u32> = HashMap::new();
    let mut tf: HashMap<&str, u64> = HashMap::new();
    let mut fp = Fingerprint::new();
    for doc in docs {
        fp.num(doc.len() as u64);
        let mut seen: Vec<&str> = Vec::with_capacity(doc.len());
        for t in doc {
            fp.field(t);
            *tf.entry(t.as_str()).or_insert(0) += 1;
            seen.push(t.as_str());
        }
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let min_df = options.min_df.max(1) as u32;
    let mut kept: Vec<(&str, u32, u64)> = df
        .into_iter()
        .filter(|&(_, d)| d >= min_df)
        .map(|(t, d)| (t, d, tf[t]))
        .collect();
    if let Some(k) = options.max_features {
        kept.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(b.0)));
        kept.truncate(k);
    }
    kept.sort_by(|a, b| a.0.cmp(b.0));
    let terms = kept.iter().map(|k| k.0.to_string()).collect();
    let dfs = kept.iter().map(|k| k.1).collect();
    Ok(Vocabulary::from_parts(terms, dfs, docs.len(), options.lowercase, fp.finish()))
}

/// Fits a vocabulary on composed inputs.
pub fn fit_vocabulary_on(inputs: &[ModelInput], options: &VocabularyOptions) -> Result<Vocabulary, FeaturizeError> {
    let docs: Vec<Vec<String>> = inputs.iter().map(|i| analyze(&i.full_text(), options.lowercase)).collect();
    fit_on_tokens(&docs, options)
}

/// Fits a vocabulary on the composed text of `records` under `setting`.
pub fn fit_vocabulary(
    records: &[ClarificationRecord],
    setting: InputSetting,
    max_results: usize,
    options: &VocabularyOptions,
) -> Result<Vocabulary, FeaturizeError> {
    let inputs = records
        .iter()
        .map(|r| compose_input(r, setting, max_results))
        .collect::<Result<Vec<_>, _>>()?;
    fit_vocabulary_on(&inputs, options)
}

/// tf-idf vector of `input`. Out-of-vocabulary terms are ignored; an input with no known
/// term maps to the zero vector.
pub fn transform_bow(input: &ModelInput, vocab: &Vocabulary) -> BowVector {
    let tokens = analyze(&input.full_text(), vocab.lowercase);
    vocab.transform_tokens(&tokens, &vocab.content_hash())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{Component, Segment};

    fn doc(text: &str) -> ModelInput {
        ModelInput {
            segments: vec![Segment {
                component: Component::Query,
                pieces: vec![text.to_string()],
            }],
            setting: InputSetting::Query,
            max_results: 10,
        }
    }

    fn fit(texts: &[&str], options: VocabularyOptions) -> Vocabulary {
        let docs: Vec<ModelInput> = texts.iter().map(|t| doc(t)).collect();
        fit_vocabulary_on(&docs, &options).unwrap()
    }

    #[test]
    fn min_df_filters_terms() {
        let v = fit(&["a b", "b c"], VocabularyOptions::default());
        assert_eq!(v.terms(), ["a", "b", "c"]);
        let v = fit(&["a b", "b c"], VocabularyOptions { min_df: 2, ..Default::default() });
        assert_eq!(v.terms(), ["b"]);
        assert_eq!(v.df(0), 2);
    }

    #[test]
    fn max_features_breaks_ties_lexicographically() {
        let v = fit(
            &["c a b", "b c a"],
            VocabularyOptions {
                max_features: Some(2),
                ..Default::default()
            },
        );
        assert_eq!(v.terms(), ["a", "b"]);
        let v = fit(
            &["c c a b"],
            VocabularyOptions {
                max_features: Some(2),
                ..Default::default()
            },
        );
        assert_eq!(v.terms(), ["a", "c"]);
    }

    #[test]
    fn empty_fit_is_an_error() {
        assert!(matches!(
            fit_vocabulary_on(&[], &VocabularyOptions::default()),
            Err(FeaturizeError::EmptyCorpus)
        ));
    }

    #[test]
    fn oov_document_is_zero_vector() {
        let v = fit(&["a b"], VocabularyOptions::default());
        let bow = transform_bow(&doc("zzz yyy"), &v);
        assert!(bow.entries.is_empty());
        assert_eq!(bow.norm(), 0.0);
    }

    #[test]
    fn single_term_is_unit_vector() {
        let v = fit(&["b"], VocabularyOptions::default());
        let bow = transform_bow(&doc("b"), &v);
        assert_eq!(bow.entries.len(), 1);
        assert!((bow.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn idf_weights_match_hand_values() {
        let v = fit(&["a b", "b"], VocabularyOptions::default());
        let idf_a = (3.0f64 / 2.0).ln() + 1.0;
        assert!((v.idf(v.index_of("a").unwrap()) - idf_a).abs() < 1e-12);
        assert!((v.idf(v.index_of("b").unwrap()) - 1.0).abs() < 1e-12);
        let bow = transform_bow(&doc("a b"), &v);
        let norm = (idf_a * idf_a + 1.0).sqrt();
        assert!((bow.entries[0].1 - idf_a / norm).abs() < 1e-12);
        assert!((bow.entries[1].1 - 1.0 / norm).abs() < 1e-12);
        assert!((bow.entries[0].1 / bow.entries[1].1 - 1.405_465_108).abs() < 1e-6);
    }

    #[test]
    fn text_artifact_round_trips() {
        let v = fit(&["alpha beta", "beta gamma gamma"], VocabularyOptions::default());
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.index_of("gamma"), v.index_of("gamma"));
        assert!(Vocabulary::from_text("nonsense").is_err());
    }

    proptest::proptest! {
        #[test]
        fn norms_are_zero_or_one(
            docs in proptest::collection::vec("[a-e ]{0,20}", 1..10),
            probe in "[a-g ]{0,20}",
        ) {
            let inputs: Vec<ModelInput> = docs.iter().map(|d| doc(d)).collect();
            let v = fit_vocabulary_on(&inputs, &VocabularyOptions::default()).unwrap();
            let n = transform_bow(&doc(&probe), &v).norm();
            proptest::prop_assert!(n.abs() < 1e-9 || (n - 1.0).abs() < 1e-9);
            for (d, input) in docs.iter().zip(&inputs) {
                let bow = transform_bow(input, &v);
                for t in analyze(d, true) {
                    let i = v.index_of(&t).unwrap();
                    proptest::prop_assert!(bow.entries.iter().any(|&(j, w)| j == i && w > 0.0));
                }
            }
        }
    }
}
