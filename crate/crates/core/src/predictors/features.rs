use serde::{Deserialize, Serialize};

/// Sparse row as `(feature index, value)` pairs sorted by index.
pub type SparseRow = Vec<(u32, f64)>;

/// Row-major sparse design matrix.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub rows: Vec<SparseRow>,
    pub n_features: usize,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<SparseRow>, n_features: usize) -> Self {
        debug_assert!(rows
            .iter()
            .all(|r| r.windows(2).all(|w| w[0].0 < w[1].0) && r.iter().all(|e| (e.0 as usize) < n_features)));
        Self { rows, n_features }
    }

    pub fn from_dense(dense: &[Vec<f64>]) -> Self {
        let n_features = dense.first().map_or(0, Vec::len);
        let rows = dense
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(i, v)| (i as u32, *v))
                    .collect()
            })
            .collect();
        Self { rows, n_features }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Column means.
    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_features];
        for row in &self.rows {
            for &(j, v) in row {
                m[j as usize] += v;
            }
        }
        let n = self.rows.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// `X v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| dot(r, v)).collect()
    }

    /// `Xᵀ u`.
    pub fn tmul_vec(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_features];
        for (row, &ui) in self.rows.iter().zip(u) {
            if ui == 0.0 {
                continue;
            }
            for &(j, v) in row {
                out[j as usize] += v * ui;
            }
        }
        out
    }

    /// Variance of every entry of the matrix, zeros included.
    pub fn entry_variance(&self) -> f64 {
        let count = (self.rows.len() * self.n_features) as f64;
        if count == 0.0 {
            return 0.0;
        }
        let (s, s2) = self
            .rows
            .iter()
            .flatten()
            .fold((0.0, 0.0), |(s, s2), &(_, v)| (s + v, s2 + v * v));
        let mean = s / count;
        (s2 / count - mean * mean).max(0.0)
    }
}

/// Dot product of a sparse row with a dense vector.
pub(crate) fn dot(row: &[(u32, f64)], dense: &[f64]) -> f64 {
    row.iter().map(|&(j, v)| v * dense[j as usize]).sum()
}

/// Dot product of two sorted sparse rows.
pub(crate) fn sparse_dot(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

pub(crate) fn sq_norm(a: &[(u32, f64)]) -> f64 {
    a.iter().map(|e| e.1 * e.1).sum()
}

/// Value of feature `j` in a sorted sparse row.
pub(crate) fn lookup(row: &[(u32, f64)], j: u32) -> f64 {
    row.binary_search_by_key(&j, |e| e.0).map_or(0.0, |k| row[k].1)
}
