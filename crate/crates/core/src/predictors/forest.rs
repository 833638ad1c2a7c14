//! Random forest of CART regression trees (squared-error splits) over sparse rows.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{lookup, FeatureMatrix, SparseRow};
use super::text::Regressor;
use super::{check_keys, param_f64, param_usize, Params, PredictorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomForestParams {
    pub n_estimators: usize,
    /// `None` grows trees until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Fraction of features considered at each split, in (0, 1].
    pub max_features: f64,
    pub bootstrap: bool,
}

impl Default for RandomForestParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: 1.0,
            bootstrap: true,
        }
    }
}

impl RandomForestParams {
    fn validate(&self) -> Result<(), PredictorError> {
        let bad = |m: &str| Err(PredictorError::InvalidHyperparameter(m.to_string()));
        if self.n_estimators == 0 {
            return bad("n_estimators must be >= 1");
        }
        if self.min_samples_split < 2 {
            return bad("min_samples_split must be >= 2");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be >= 1");
        }
        if !(self.max_features > 0.0 && self.max_features <= 1.0) {
            return bad("max_features must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[(u32, f64)]) -> f64 {
        let mut k = 0usize;
        loop {
            match &self.nodes[k] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    k = if lookup(row, *feature) <= *threshold { *left } else { *right } as usize;
                }
            }
        }
    }

    fn depth(&self) -> usize {
        fn go(t: &Tree, k: usize) -> usize {
            match &t.nodes[k] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left as usize).max(go(t, *right as usize)),
            }
        }
        go(self, 0)
    }
}

struct Builder<'a> {
    rows: &'a [SparseRow],
    y: &'a [f64],
    n_features: usize,
    params: &'a RandomForestParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: u32,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn build(&mut self, samples: Vec<u32>, depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let n = samples.len();
        let sum: f64 = samples.iter().map(|&s| self.y[s as usize]).sum();
        let mean = sum / n as f64;
        self.nodes.push(Node::Leaf(mean));
        let first = self.y[samples[0] as usize];
        let pure = samples.iter().all(|&s| self.y[s as usize] == first);
        if pure || n < self.params.min_samples_split || self.params.max_depth.is_some_and(|d| depth >= d) {
            return id;
        }
        let Some(best) = self.best_split(&samples, sum) else {
            return id;
        };
        let (left, right): (Vec<u32>, Vec<u32>) = samples
            .into_iter()
            .partition(|&s| lookup(&self.rows[s as usize], best.feature) <= best.threshold);
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[id as usize] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        id
    }

    fn best_split(&mut self, samples: &[u32], total: f64) -> Option<BestSplit> {
        let n = samples.len();
        let candidate: Option<Vec<bool>> = if self.params.max_features < 1.0 {
            let k = ((self.params.max_features * self.n_features as f64).ceil() as usize).clamp(1, self.n_features);
            let mut mask = vec![false; self.n_features];
            for j in sample(&mut self.rng, self.n_features, k) {
                mask[j] = true;
            }
            Some(mask)
        } else {
            None
        };
        // (feature, value, label) for every non-zero entry in the node
        let mut entries: Vec<(u32, f64, f64)> = Vec::new();
        for &s in samples {
            let yi = self.y[s as usize];
            for &(j, v) in &self.rows[s as usize] {
                if candidate.as_ref().is_none_or(|m| m[j as usize]) {
                    entries.push((j, v, yi));
                }
            }
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let min_leaf = self.params.min_samples_leaf;
        let parent = total * total / n as f64;
        let mut best: Option<BestSplit> = None;
        let mut start = 0;
        while start < entries.len() {
            let f = entries[start].0;
            let mut end = start;
            while end < entries.len() && entries[end].0 == f {
                end += 1;
            }
            let group = &entries[start..end];
            let nz_sum: f64 = group.iter().map(|e| e.2).sum();
            let zeros = n - group.len();
            let zero_sum = total - nz_sum;
            // ordered value blocks: negatives, the zero block, positives
            let neg = group.partition_point(|e| e.1 < 0.0);
            let mut blocks: Vec<(f64, usize, f64)> = Vec::new();
            let mut push = |v: f64, c: usize, s: f64| match blocks.last_mut() {
                Some(last) if last.0 == v => {
                    last.1 += c;
                    last.2 += s;
                }
                _ => blocks.push((v, c, s)),
            };
            for e in &group[..neg] {
                push(e.1, 1, e.2);
            }
            if zeros > 0 {
                push(0.0, zeros, zero_sum);
            }
            for e in &group[neg..] {
                push(e.1, 1, e.2);
            }
            let (mut nl, mut sl) = (0usize, 0.0);
            for w in 0..blocks.len().saturating_sub(1) {
                nl += blocks[w].1;
                sl += blocks[w].2;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let sr = total - sl;
                let score = sl * sl / nl as f64 + sr * sr / nr as f64 - parent;
                if score > 1e-12 && best.as_ref().is_none_or(|b| score > b.score) {
                    let (a, b) = (blocks[w].0, blocks[w + 1].0);
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
            start = end;
        }
        best
    }
}

fn tree_seed(seed: u64, t: usize) -> u64 {
    seed ^ (t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RandomForest {
    params: RandomForestParams,
    trees: Vec<Tree>,
}

impl RandomForest {
    pub fn new(params: RandomForestParams) -> Result<Self, PredictorError> {
        params.validate()?;
        Ok(Self { params, trees: Vec::new() })
    }

    pub fn params(&self) -> &RandomForestParams {
        &self.params
    }

    pub fn max_tree_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }
}

impl Regressor for RandomForest {
    const NAME: &'static str = "random_forest";
    const PARAM_KEYS: &'static [&'static str] = &[
        "n_estimators",
        "max_depth",
        "min_samples_split",
        "min_samples_leaf",
        "max_features",
        "bootstrap",
    ];

    fn from_params(params: &Params) -> Result<Self, PredictorError> {
        check_keys(params, Self::PARAM_KEYS)?;
        let mut p = RandomForestParams::default();
        if let Some(v) = param_usize(params, "n_estimators")? {
            p.n_estimators = v;
        }
        p.max_depth = param_usize(params, "max_depth")?;
        if let Some(v) = param_usize(params, "min_samples_split")? {
            p.min_samples_split = v;
        }
        if let Some(v) = param_usize(params, "min_samples_leaf")? {
            p.min_samples_leaf = v;
        }
        if let Some(v) = param_f64(params, "max_features")? {
            p.max_features = v;
        }
        match params.get("bootstrap") {
            None | Some(serde_json::Value::Null) => {}
            Some(serde_json::Value::Bool(b)) => p.bootstrap = *b,
            Some(v) => return Err(PredictorError::InvalidHyperparameter(format!("bootstrap must be a bool, got {v}"))),
        }
        Self::new(p)
    }

    fn fit(&mut self, x: &FeatureMatrix, y: &[f64], seed: u64) -> Result<(), PredictorError> {
        self.params.validate()?;
        if x.n_rows() != y.len() {
            return Err(PredictorError::LengthMismatch(x.n_rows(), y.len()));
        }
        if y.is_empty() {
            return Err(PredictorError::EmptyTraining);
        }
        let n = y.len();
        self.trees = (0..self.params.n_estimators)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(seed, t));
                let samples: Vec<u32> = if self.params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n as u32)).collect()
                } else {
                    (0..n as u32).collect()
                };
                let mut b = Builder {
                    rows: &x.rows,
                    y,
                    n_features: x.n_features,
                    params: &self.params,
                    rng,
                    nodes: Vec::new(),
                };
                b.build(samples, 0);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(())
    }

    fn predict_row(&self, row: &[(u32, f64)]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }

    fn is_fitted(&self) -> bool {
        !self.trees.is_empty()
    }

    fn hyperparameters(&self) -> Params {
        let mut p = Params::new();
        p.insert("n_estimators".into(), self.params.n_estimators.into());
        p.insert(
            "max_depth".into(),
            self.params.max_depth.map_or(serde_json::Value::Null, Into::into),
        );
        p.insert("min_samples_split".into(), self.params.min_samples_split.into());
        p.insert("min_samples_leaf".into(), self.params.min_samples_leaf.into());
        p.insert("max_features".into(), self.params.max_features.into());
        p.insert("bootstrap".into(), self.params.bootstrap.into());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn forest(params: RandomForestParams, dense: &[Vec<f64>], y: &[f64], seed: u64) -> RandomForest {
        let mut f = RandomForest::new(params).unwrap();
        f.fit(&FeatureMatrix::from_dense(dense), y, seed).unwrap();
        f
    }

    #[test]
    fn depth_zero_predicts_training_mean() {
        let dense = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let y = [0.0, 1.0, 5.0, 10.0];
        let f = forest(
            RandomForestParams {
                n_estimators: 1,
                max_depth: Some(0),
                bootstrap: false,
                ..Default::default()
            },
            &dense,
            &y,
            0,
        );
        assert_eq!(f.predict_row(&[(0, 7.0)]), 4.0);
        assert_eq!(f.max_tree_depth(), 0);
    }

    /// Oracle: brute-force best single split over dense columns.
    fn brute_stump(dense: &[Vec<f64>], y: &[f64]) -> (usize, f64, f64, f64) {
        let mut best = (0, 0.0, f64::INFINITY, 0.0);
        for j in 0..dense[0].len() {
            let mut vals: Vec<f64> = dense.iter().map(|r| r[j]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (l, r): (Vec<f64>, Vec<f64>) = {
                    let mut l = vec![];
                    let mut r = vec![];
                    for (row, yi) in dense.iter().zip(y) {
                        if row[j] <= t { l.push(*yi) } else { r.push(*yi) }
                    }
                    (l, r)
                };
                let sse = |v: &[f64]| {
                    let m = v.iter().sum::<f64>() / v.len() as f64;
                    v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
                };
                let total = sse(&l) + sse(&r);
                if total < best.2 - 1e-12 {
                    let ml = l.iter().sum::<f64>() / l.len() as f64;
                    let mr = r.iter().sum::<f64>() / r.len() as f64;
                    best = (j, t, total, ml - mr);
                }
            }
        }
        best
    }

    #[test]
    fn stump_matches_brute_force() {
        let dense = vec![
            vec![0.0, 0.3, -1.0],
            vec![0.5, 0.0, 0.0],
            vec![0.0, 0.9, 2.0],
            vec![0.2, 0.1, 0.0],
            vec![0.0, 0.0, -0.5],
            vec![0.7, 0.4, 1.0],
        ];
        let y = [1.0, 4.0, 9.0, 2.0, 0.0, 7.0];
        let f = forest(
            RandomForestParams {
                n_estimators: 1,
                max_depth: Some(1),
                bootstrap: false,
                ..Default::default()
            },
            &dense,
            &y,
            0,
        );
        let (j, t, _, _) = brute_stump(&dense, &y);
        let Node::Split { feature, threshold, .. } = &f.trees[0].nodes[0] else { panic!() };
        assert_eq!((*feature as usize, *threshold), (j, t));
        for (row, _) in dense.iter().zip(&y) {
            let side: Vec<f64> = dense
                .iter()
                .zip(&y)
                .filter(|(r, _)| (r[j] <= t) == (row[j] <= t))
                .map(|(_, v)| *v)
                .collect();
            let mean = side.iter().sum::<f64>() / side.len() as f64;
            let sparse = FeatureMatrix::from_dense(&[row.clone()]).rows.remove(0);
            assert!((f.predict_row(&sparse) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn unbounded_depth_memorises_distinct_rows() {
        let dense: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64).collect();
        let f = forest(
            RandomForestParams {
                n_estimators: 1,
                bootstrap: false,
                ..Default::default()
            },
            &dense,
            &y,
            0,
        );
        let x = FeatureMatrix::from_dense(&dense);
        for (r, yi) in x.rows.iter().zip(&y) {
            assert_eq!(f.predict_row(r), *yi);
        }
    }

    #[test]
    fn seeded_and_bounded() {
        let dense: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 5) as f64, (i % 7) as f64 * 0.1]).collect();
        let y: Vec<f64> = (0..30).map(|i| (i % 11) as f64).collect();
        let p = RandomForestParams {
            n_estimators: 20,
            max_features: 0.5,
            ..Default::default()
        };
        let a = forest(p, &dense, &y, 9);
        let b = forest(p, &dense, &y, 9);
        let c = forest(p, &dense, &y, 10);
        let x = FeatureMatrix::from_dense(&dense);
        let pa: Vec<f64> = x.rows.iter().map(|r| a.predict_row(r)).collect();
        let pb: Vec<f64> = x.rows.iter().map(|r| b.predict_row(r)).collect();
        let pc: Vec<f64> = x.rows.iter().map(|r| c.predict_row(r)).collect();
        assert_eq!(pa, pb);
        assert_ne!(pa, pc);
        assert!(pa.iter().all(|v| (0.0..=10.0).contains(v)));
    }

    #[test]
    fn invalid_params() {
        for p in [
            RandomForestParams { n_estimators: 0, ..Default::default() },
            RandomForestParams { max_features: 0.0, ..Default::default() },
            RandomForestParams { min_samples_leaf: 0, ..Default::default() },
        ] {
            assert!(RandomForest::new(p).is_err());
        }
    }
}
