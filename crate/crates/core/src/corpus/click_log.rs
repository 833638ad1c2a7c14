//! Tab-separated click log ingestion.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClarificationRecord, Corpus, CorpusError, Impression, Provenance, SourceFile, MAX_ENGAGEMENT, MIN_ANSWERS};
use crate::hashing::sha256_hex;

/// Maps record fields onto header names. Defaults follow the MIMICS-Click layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMapping {
    pub query: String,
    pub question: String,
    pub answers: Vec<String>,
    pub impression: String,
    pub engagement: String,
    /// Per-answer click probability columns, aligned with `answers`. Used only when every
    /// listed column is present in the header.
    pub click_probs: Vec<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            query: "query".into(),
            question: "question".into(),
            answers: (1..=5).map(|i| format!("option_{i}")).collect(),
            impression: "impression_level".into(),
            engagement: "engagement_level".into(),
            click_probs: (1..=5).map(|i| format!("option_cce_{i}")).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MalformedRow,
    InvalidLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based line number in the source file.
    pub line: u64,
    pub reason: RejectReason,
    pub detail: String,
}

/// Row accounting for one click-log parse.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows: usize,
    pub accepted: usize,
    pub malformed: usize,
    pub invalid_label: usize,
    /// The first [`ParseReport::MAX_LISTED`] rejections, for diagnostics.
    pub rejections: Vec<Rejection>,
}

impl ParseReport {
    pub const MAX_LISTED: usize = 100;

    pub fn rejected(&self) -> usize {
        self.malformed + self.invalid_label
    }

    fn reject(&mut self, line: u64, reason: RejectReason, detail: String) {
        match reason {
            RejectReason::MalformedRow => self.malformed += 1,
            RejectReason::InvalidLabel => self.invalid_label += 1,
        }
        if self.rejections.len() < Self::MAX_LISTED {
            self.rejections.push(Rejection { line, reason, detail });
        }
    }
}

struct Columns {
    width: usize,
    query: usize,
    question: usize,
    answers: Vec<usize>,
    impression: usize,
    engagement: usize,
    click_probs: Option<Vec<usize>>,
}

impl Columns {
    fn resolve(header: &csv::StringRecord, mapping: &ColumnMapping, path: &Path) -> Result<Self, CorpusError> {
        let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
        let find = |name: &str| {
            index.get(name).copied().ok_or_else(|| CorpusError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })
        };
        let answers = mapping.answers.iter().map(|a| find(a)).collect::<Result<Vec<_>, _>>()?;
        let click_probs = if mapping.click_probs.len() == mapping.answers.len()
            && mapping.click_probs.iter().all(|c| index.contains_key(c.as_str()))
        {
            Some(mapping.click_probs.iter().map(|c| index[c.as_str()]).collect())
        } else {
            None
        };
        Ok(Self {
            width: header.len(),
            query: find(&mapping.query)?,
            question: find(&mapping.question)?,
            answers,
            impression: find(&mapping.impression)?,
            engagement: find(&mapping.engagement)?,
            click_probs,
        })
    }
}

fn parse_engagement(raw: &str) -> Result<u8, String> {
    let raw = raw.trim();
    let value: f64 = raw.parse().map_err(|_| format!("engagement `{raw}` is not a number"))?;
    if value.fract() != 0.0 || !(0.0..=f64::from(MAX_ENGAGEMENT)).contains(&value) {
        return Err(format!("engagement `{raw}` outside integer range 0..=10"));
    }
    Ok(value as u8)
}

fn parse_row(row: &csv::StringRecord, cols: &Columns) -> Result<ClarificationRecord, String> {
    let field = |i: usize| row.get(i).unwrap_or("");
    let mut answers = Vec::new();
    let mut probs = Vec::new();
    let mut probs_complete = cols.click_probs.is_some();
    for (k, &ai) in cols.answers.iter().enumerate() {
        let answer = field(ai).trim();
        if answer.is_empty() {
            continue;
        }
        answers.push(answer.to_string());
        if let Some(pc) = &cols.click_probs {
            let raw = field(pc[k]).trim();
            if raw.is_empty() {
                probs_complete = false;
                continue;
            }
            let p: f64 = raw.parse().map_err(|_| format!("click probability `{raw}` is not a number"))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("click probability {p} outside [0,1]"));
            }
            probs.push(p);
        }
    }
    if answers.len() < MIN_ANSWERS {
        return Err(format!("{} non-empty answers; at least {MIN_ANSWERS} required", answers.len()));
    }
    let impression: Impression = field(cols.impression).parse()?;
    let engagement = parse_engagement(field(cols.engagement))?;
    let record = ClarificationRecord {
        query: field(cols.query).trim().to_string(),
        question: field(cols.question).trim().to_string(),
        answers,
        impression,
        engagement,
        answer_click_probs: probs_complete.then_some(probs),
        serp: None,
    };
    record.validate().map_err(|e| e.to_string())?;
    Ok(record)
}

/// Parses a tab-separated click log with a header row.
///
/// Rows with the wrong column count are rejected as malformed; rows with out-of-range labels,
/// unknown impression tokens or fewer than two non-empty answers are rejected as invalid.
/// Both are counted in the returned corpus provenance. Returns `EmptyCorpus` if no row survives.
pub fn parse_click_log(path: &Path, mapping: &ColumnMapping) -> Result<Corpus, CorpusError> {
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .has_headers(true)
        .from_reader(bytes.as_slice());
    let header = reader
        .headers()
        .map_err(|_| CorpusError::MissingHeader { path: path.to_path_buf() })?
        .clone();
    if header.is_empty() || header.iter().all(|h| h.trim().is_empty()) {
        return Err(CorpusError::MissingHeader { path: path.to_path_buf() });
    }
    let cols = Columns::resolve(&header, mapping, path)?;

    let mut report = ParseReport::default();
    let mut records = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                report.rows += 1;
                report.reject(line, RejectReason::MalformedRow, e.to_string());
                continue;
            }
        }
        if row.len() == 1 && row.get(0).is_some_and(|c| c.trim().is_empty()) {
            continue;
        }
        report.rows += 1;
        if row.len() != cols.width {
            report.reject(
                line,
                RejectReason::MalformedRow,
                format!("{} columns; header has {}", row.len(), cols.width),
            );
            continue;
        }
        match parse_row(&row, &cols) {
            Ok(r) => records.push(r),
            Err(detail) => report.reject(line, RejectReason::InvalidLabel, detail),
        }
    }
    report.accepted = records.len();
    if report.rejected() > 0 {
        log::warn!(
            "{}: rejected {} of {} rows ({} malformed, {} invalid)",
            path.display(),
            report.rejected(),
            report.rows,
            report.malformed,
            report.invalid_label
        );
    }
    let provenance = Provenance {
        sources: vec![SourceFile {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        }],
        parse: Some(report),
        ..Provenance::default()
    };
    Corpus::new(records, provenance)
}
