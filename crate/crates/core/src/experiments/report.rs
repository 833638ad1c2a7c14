//! Delimiter-separated report tables with a metadata preamble.

use serde::{Deserialize, Serialize};

use crate::hashing::sha256_hex;

/// A report table. `to_tsv` is deterministic: the preamble is written in insertion order as
/// `# key: value` lines, followed by a tab-separated header and rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub preamble: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(title: &str, header: &[&str]) -> Self {
        Self {
            title: title.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.preamble.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Value of `column` in row `row`.
    pub fn cell(&self, row: usize, column: &str) -> Option<&str> {
        let c = self.header.iter().position(|h| h == column)?;
        self.rows.get(row).map(|r| r[c].as_str())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("# {}\n", self.title);
        for (k, v) in &self.preamble {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        out.push_str(&self.header.join("\t"));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join("\t"));
            out.push('\n');
        }
        out
    }
}

/// Six decimals, `nan` for NaN.
pub fn fmt_metric(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.6}")
    }
}

/// SHA-256 of the JSON form of `spec`.
pub fn spec_hash<T: Serialize>(spec: &T) -> String {
    sha256_hex(serde_json::to_string(spec).expect("spec serialises").as_bytes())
}

/// One point of a figure-ready series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub x: f64,
    pub y: f64,
    pub series: String,
}

/// `x\ty\tseries` lines under a header.
pub fn series_tsv(points: &[SeriesPoint]) -> String {
    let mut out = String::from("x\ty\tseries\n");
    for p in points {
        out.push_str(&format!("{}\t{}\t{}\n", p.x, fmt_metric(p.y), p.series));
    }
    out
}
