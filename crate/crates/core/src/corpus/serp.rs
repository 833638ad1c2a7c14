//! Line-delimited JSON SERP dumps.
//!
//! Each line is one object:
//!
//! ```text
//! {"query": "red dress", "results": [{"title": "...", "url": "https://...", "snippet": "..."}, ...]}
//! ```
//!
//! Missing `title`/`snippet` fields become empty strings. Results without a url are dropped.
//! Only the first ten results of an entry are kept.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Serp, SerpResult, SourceFile, MAX_RESULTS};
use crate::hashing::sha256_hex;

/// Query → SERP.
pub type SerpDump = BTreeMap<String, Serp>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerpParseReport {
    pub source: Option<SourceFile>,
    pub entries: usize,
    pub malformed: usize,
    /// 1-based line numbers of the first malformed lines.
    pub malformed_lines: Vec<u64>,
    pub truncated: usize,
    pub results_without_url: usize,
    pub duplicate_queries: usize,
}

#[derive(Deserialize)]
struct RawEntry {
    query: String,
    #[serde(default, alias = "serp")]
    results: Vec<RawResult>,
}

#[derive(Deserialize)]
struct RawResult {
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    url: Option<String>,
    #[serde(default)]
    snippet: Option<String>,
}

/// Parses a SERP dump. Unparseable lines are skipped and counted.
pub fn parse_serp_dump(path: &Path) -> Result<(SerpDump, SerpParseReport), CorpusError> {
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8_lossy(&bytes);
    let mut report = SerpParseReport {
        source: Some(SourceFile {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        }),
        ..SerpParseReport::default()
    };
    let mut dump = SerpDump::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: RawEntry = match serde_json::from_str(line) {
            Ok(e) => e,
            Err(_) => {
                report.malformed += 1;
                if report.malformed_lines.len() < 100 {
                    report.malformed_lines.push(i as u64 + 1);
                }
                continue;
            }
        };
        report.entries += 1;
        if entry.results.len() > MAX_RESULTS {
            report.truncated += 1;
        }
        let mut results = Vec::with_capacity(MAX_RESULTS);
        for raw in entry.results.into_iter().take(MAX_RESULTS) {
            match raw.url.filter(|u| !u.trim().is_empty()) {
                Some(url) => results.push(SerpResult {
                    title: raw.title.unwrap_or_default(),
                    url,
                    snippet: raw.snippet.unwrap_or_default(),
                }),
                None => report.results_without_url += 1,
            }
        }
        if dump.contains_key(&entry.query) {
            report.duplicate_queries += 1;
            continue;
        }
        dump.insert(entry.query, Serp::new(results));
    }
    Ok((dump, report))
}

/// Serialises one dump entry in the format read by [`parse_serp_dump`].
pub fn serp_line(query: &str, serp: &Serp) -> String {
    serde_json::json!({ "query": query, "results": serp.results }).to_string()
}
