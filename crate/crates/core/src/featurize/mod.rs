//! Model inputs: input-composition settings, tf-idf vectors and encoder token sequences.

mod encoder;
mod tfidf;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ClarificationRecord, MAX_RESULTS};

pub use encoder::{tokenize_for_encoder, TokenSequence, WordTokenizer, WordTokenizerOptions, CLS, PAD, SEP, UNK};
pub use tfidf::{fit_vocabulary, fit_vocabulary_on, transform_bow, BowVector, Vocabulary, VocabularyOptions};
pub(crate) use tfidf::fit_on_tokens as tfidf_fit_on_tokens;

#[derive(Debug, Error)]
pub enum FeaturizeError {
    #[error("setting `{0}` needs search results but the record has no SERP")]
    MissingSerp(InputSetting),
    #[error("max_results {0} outside 0..=10")]
    InvalidMaxResults(usize),
    #[error("no documents to fit a vocabulary on")]
    EmptyCorpus,
    #[error("token budget {0} cannot hold the classification marker and one query token")]
    BudgetTooSmall(usize),
    #[error("unknown input setting `{0}`")]
    UnknownSetting(String),
    #[error("vocabulary artifact: {0}")]
    VocabularyFormat(String),
}

/// Which components are fed to a model. These are the six ablation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InputSetting {
    #[serde(rename = "query")]
    Query,
    #[serde(rename = "query+pane")]
    QueryPane,
    #[serde(rename = "query+titles")]
    QueryTitles,
    #[serde(rename = "query+snippets")]
    QuerySnippets,
    #[serde(rename = "query+pane+titles")]
    QueryPaneTitles,
    #[serde(rename = "query+pane+snippets")]
    QueryPaneSnippets,
}

/// Which text of the search results a setting reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SerpField {
    Titles,
    Snippets,
}

impl InputSetting {
    pub const ALL: [InputSetting; 6] = [
        InputSetting::Query,
        InputSetting::QueryPane,
        InputSetting::QueryTitles,
        InputSetting::QuerySnippets,
        InputSetting::QueryPaneTitles,
        InputSetting::QueryPaneSnippets,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InputSetting::Query => "query",
            InputSetting::QueryPane => "query+pane",
            InputSetting::QueryTitles => "query+titles",
            InputSetting::QuerySnippets => "query+snippets",
            InputSetting::QueryPaneTitles => "query+pane+titles",
            InputSetting::QueryPaneSnippets => "query+pane+snippets",
        }
    }

    pub fn includes_pane(self) -> bool {
        matches!(
            self,
            InputSetting::QueryPane | InputSetting::QueryPaneTitles | InputSetting::QueryPaneSnippets
        )
    }

    pub fn serp_field(self) -> Option<SerpField> {
        match self {
            InputSetting::QueryTitles | InputSetting::QueryPaneTitles => Some(SerpField::Titles),
            InputSetting::QuerySnippets | InputSetting::QueryPaneSnippets => Some(SerpField::Snippets),
            InputSetting::Query | InputSetting::QueryPane => None,
        }
    }

    pub fn needs_serp(self) -> bool {
        self.serp_field().is_some()
    }
}

impl fmt::Display for InputSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputSetting {
    type Err = FeaturizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InputSetting::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| FeaturizeError::UnknownSetting(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Query,
    Question,
    Answers,
    Titles,
    Snippets,
}

/// One component of a composed input. `pieces` are the individual answers, titles or
/// snippets; query and question have a single piece.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub component: Component,
    pub pieces: Vec<String>,
}

impl Segment {
    fn single(component: Component, text: &str) -> Self {
        Self {
            component,
            pieces: vec![text.to_string()],
        }
    }

    /// Pieces joined by single spaces.
    pub fn text(&self) -> String {
        self.pieces.join(" ")
    }
}

/// The composed input for one record under one setting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInput {
    pub segments: Vec<Segment>,
    pub setting: InputSetting,
    pub max_results: usize,
}

impl ModelInput {
    /// All segment texts joined by single spaces; used for bag-of-words features.
    pub fn full_text(&self) -> String {
        self.segments.iter().map(Segment::text).collect::<Vec<_>>().join(" ")
    }
}

/// Composes the model input for `record`.
///
/// Segment order is query, question, answers, SERP content. The SERP segment holds the first
/// `min(max_results, |results|)` titles or snippets; it is left out when that is zero.
pub fn compose_input(
    record: &ClarificationRecord,
    setting: InputSetting,
    max_results: usize,
) -> Result<ModelInput, FeaturizeError> {
    if max_results > MAX_RESULTS {
        return Err(FeaturizeError::InvalidMaxResults(max_results));
    }
    let mut segments = vec![Segment::single(Component::Query, &record.query)];
    if setting.includes_pane() {
        segments.push(Segment::single(Component::Question, &record.question));
        segments.push(Segment {
            component: Component::Answers,
            pieces: record.answers.clone(),
        });
    }
    if let Some(field) = setting.serp_field() {
        let serp = record.serp.as_ref().ok_or(FeaturizeError::MissingSerp(setting))?;
        let take = serp.results.iter().take(max_results);
        let (component, pieces): (_, Vec<String>) = match field {
            SerpField::Titles => (Component::Titles, take.map(|r| r.title.clone()).collect()),
            SerpField::Snippets => (Component::Snippets, take.map(|r| r.snippet.clone()).collect()),
        };
        if !pieces.is_empty() {
            segments.push(Segment { component, pieces });
        }
    }
    Ok(ModelInput {
        segments,
        setting,
        max_results,
    })
}

/// Lowercases (optionally) and splits on runs of non-alphanumeric characters.
pub fn analyze(text: &str, lowercase: bool) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}
