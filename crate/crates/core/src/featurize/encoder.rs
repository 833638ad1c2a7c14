//! Token sequences for sequence encoders.
//!
//! A sequence is `[CLS] seg_1 [SEP] seg_2 [SEP] ...`. Answers inside the answers segment are
//! separated by `[SEP]`; titles or snippets are concatenated. When the sequence exceeds the
//! budget, tokens are cut from the end of the last segment first and then from earlier
//! segments right to left. The classification marker and at least one query token are kept.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{analyze, Component, FeaturizeError, ModelInput};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
const N_SPECIAL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WordTokenizerOptions {
    pub lowercase: bool,
    pub min_count: usize,
    /// Upper bound on regular (non-special) tokens.
    pub max_size: Option<usize>,
}

impl Default for WordTokenizerOptions {
    fn default() -> Self {
        Self {
            lowercase: true,
            min_count: 1,
            max_size: Some(30_000),
        }
    }
}

/// Word-level tokenizer whose vocabulary is fitted on a training corpus.
///
/// Ids 0..4 are `[PAD]`, `[UNK]`, `[CLS]`, `[SEP]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TokenizerData", into = "TokenizerData")]
pub struct WordTokenizer {
    words: Vec<String>,
    lowercase: bool,
    index: HashMap<String, u32>,
}

#[derive(Clone, Serialize, Deserialize)]
struct TokenizerData {
    words: Vec<String>,
    lowercase: bool,
}

impl From<TokenizerData> for WordTokenizer {
    fn from(d: TokenizerData) -> Self {
        WordTokenizer::from_words(d.words, d.lowercase)
    }
}

impl From<WordTokenizer> for TokenizerData {
    fn from(t: WordTokenizer) -> Self {
        TokenizerData {
            words: t.words,
            lowercase: t.lowercase,
        }
    }
}

impl WordTokenizer {
    fn from_words(words: Vec<String>, lowercase: bool) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), (i + N_SPECIAL) as u32))
            .collect();
        Self { words, lowercase, index }
    }

    /// Fits on raw texts. Words are ranked by count (ties lexicographic) before `max_size`
    /// truncation.
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>, options: &WordTokenizerOptions) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in analyze(text, options.lowercase) {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> =
            counts.into_iter().filter(|&(_, c)| c >= options.min_count.max(1)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(k) = options.max_size {
            ranked.truncate(k);
        }
        Self::from_words(ranked.into_iter().map(|(w, _)| w).collect(), options.lowercase)
    }

    /// Fits on every text component of the given inputs.
    pub fn fit_inputs(inputs: &[ModelInput], options: &WordTokenizerOptions) -> Self {
        let texts: Vec<&str> = inputs
            .iter()
            .flat_map(|i| i.segments.iter().flat_map(|s| s.pieces.iter().map(String::as_str)))
            .collect();
        Self::fit(texts, options)
    }

    /// Vocabulary size including special tokens.
    pub fn vocab_size(&self) -> usize {
        self.words.len() + N_SPECIAL
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn token_id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        analyze(text, self.lowercase).iter().map(|w| self.token_id(w)).collect()
    }
}

/// Encoder input: token ids and the segment index of each position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub segment_ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn segment_tokens(tokenizer: &WordTokenizer, input: &ModelInput) -> Vec<Vec<u32>> {
    input
        .segments
        .iter()
        .map(|seg| match seg.component {
            Component::Answers => {
                let mut out = Vec::new();
                for (i, a) in seg.pieces.iter().enumerate() {
                    if i > 0 {
                        out.push(SEP);
                    }
                    out.extend(tokenizer.encode(a));
                }
                out
            }
            _ => seg.pieces.iter().flat_map(|p| tokenizer.encode(p)).collect(),
        })
        .collect()
}

/// Builds the encoder token sequence for `input`, truncated to `budget` positions.
pub fn tokenize_for_encoder(
    input: &ModelInput,
    tokenizer: &WordTokenizer,
    budget: usize,
) -> Result<TokenSequence, FeaturizeError> {
    if budget < 2 {
        return Err(FeaturizeError::BudgetTooSmall(budget));
    }
    let mut segs = segment_tokens(tokenizer, input);
    // Each segment contributes its tokens plus a trailing separator.
    let mut keep_sep = vec![true; segs.len()];
    let total = 1 + segs.iter().map(|s| s.len() + 1).sum::<usize>();
    let mut excess = total as isize - budget as isize;
    for k in (0..segs.len()).rev() {
        if excess <= 0 {
            break;
        }
        let min_keep = usize::from(k == 0 && !segs[k].is_empty());
        let removable = segs[k].len() - min_keep;
        let cut = removable.min(excess as usize);
        let new_len = segs[k].len() - cut;
        segs[k].truncate(new_len);
        excess -= cut as isize;
        if k > 0 && segs[k].is_empty() {
            keep_sep[k] = false;
            excess -= 1;
        }
    }
    if excess > 0 {
        // Only `[CLS] q [SEP]` is left and the budget is 2.
        keep_sep[0] = false;
    }
    let mut ids = vec![CLS];
    let mut segment_ids = vec![0];
    for (k, seg) in segs.iter().enumerate() {
        if k > 0 && seg.is_empty() {
            continue;
        }
        ids.extend_from_slice(seg);
        segment_ids.extend(std::iter::repeat_n(k as u32, seg.len()));
        if keep_sep[k] {
            ids.push(SEP);
            segment_ids.push(k as u32);
        }
    }
    debug_assert!(ids.len() <= budget);
    Ok(TokenSequence { ids, segment_ids })
}
