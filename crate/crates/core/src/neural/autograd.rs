//! Reverse-mode automatic differentiation over row-major `f64` matrices.
//!
//! A [`Tape`] records one forward pass. Parameters live in a [`ParamStore`] and are read by
//! reference; [`Tape::backward`] returns their gradients.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type NodeId = usize;
pub type ParamId = usize;

/// Named parameter matrices with their optimiser flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "StoreData", into = "StoreData")]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    /// Subject to decoupled weight decay.
    decay: Vec<bool>,
    trainable: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct StoreEntry {
    name: String,
    rows: usize,
    cols: usize,
    decay: bool,
    trainable: bool,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StoreData {
    params: Vec<StoreEntry>,
}

impl From<StoreData> for ParamStore {
    fn from(d: StoreData) -> Self {
        let mut s = ParamStore::default();
        for e in d.params {
            let v = Array2::from_shape_vec((e.rows, e.cols), e.data).unwrap_or_else(|_| Array2::zeros((e.rows, e.cols)));
            let id = s.add(&e.name, v, e.decay);
            s.trainable[id] = e.trainable;
        }
        s
    }
}

impl From<ParamStore> for StoreData {
    fn from(s: ParamStore) -> Self {
        StoreData {
            params: s
                .names
                .into_iter()
                .zip(s.values)
                .zip(s.decay.into_iter().zip(s.trainable))
                .map(|((name, v), (decay, trainable))| StoreEntry {
                    name,
                    rows: v.nrows(),
                    cols: v.ncols(),
                    decay,
                    trainable,
                    data: v.iter().copied().collect(),
                })
                .collect(),
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            decay: Vec::new(),
            trainable: Vec::new(),
        }
    }
}

impl ParamStore {
    pub fn add(&mut self, name: &str, value: Array2<f64>, decay: bool) -> ParamId {
        self.names.push(name.to_string());
        self.values.push(value);
        self.decay.push(decay);
        self.trainable.push(true);
        self.values.len() - 1
    }

    pub fn freeze(&mut self, id: ParamId) {
        self.trainable[id] = false;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id]
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.decay[id]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id]
    }

    /// Number of trainable scalars.
    pub fn n_trainable(&self) -> usize {
        self.values
            .iter()
            .zip(&self.trainable)
            .filter(|(_, t)| **t)
            .map(|(v, _)| v.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Gradient of one parameter: dense, or a set of touched rows for embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamGrad {
    Dense(Array2<f64>),
    Rows(BTreeMap<usize, Array1<f64>>),
}

impl ParamGrad {
    fn add_into(&mut self, other: ParamGrad) {
        match (self, other) {
            (ParamGrad::Dense(a), ParamGrad::Dense(b)) => *a += &b,
            (ParamGrad::Dense(a), ParamGrad::Rows(rows)) => {
                for (r, g) in rows {
                    let mut row = a.row_mut(r);
                    row += &g;
                }
            }
            (ParamGrad::Rows(a), ParamGrad::Rows(b)) => {
                for (r, g) in b {
                    match a.get_mut(&r) {
                        Some(x) => *x += &g,
                        None => {
                            a.insert(r, g);
                        }
                    }
                }
            }
            (this @ ParamGrad::Rows(_), ParamGrad::Dense(mut b)) => {
                if let ParamGrad::Rows(rows) = std::mem::replace(this, ParamGrad::Rows(BTreeMap::new())) {
                    for (r, g) in rows {
                        let mut row = b.row_mut(r);
                        row += &g;
                    }
                }
                *this = ParamGrad::Dense(b);
            }
        }
    }

    /// Dense view with the shape of the parameter.
    pub fn to_dense(&self, shape: (usize, usize)) -> Array2<f64> {
        match self {
            ParamGrad::Dense(a) => a.clone(),
            ParamGrad::Rows(rows) => {
                let mut a = Array2::zeros(shape);
                for (r, g) in rows {
                    a.row_mut(*r).assign(g);
                }
                a
            }
        }
    }

    fn scale(&mut self, c: f64) {
        match self {
            ParamGrad::Dense(a) => a.mapv_inplace(|v| v * c),
            ParamGrad::Rows(rows) => rows.values_mut().for_each(|g| g.mapv_inplace(|v| v * c)),
        }
    }

    fn sq_norm(&self) -> f64 {
        match self {
            ParamGrad::Dense(a) => a.iter().map(|v| v * v).sum(),
            ParamGrad::Rows(rows) => rows.values().flat_map(|g| g.iter()).map(|v| v * v).sum(),
        }
    }
}

/// Per-parameter gradients of one or more backward passes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Grads {
    pub params: Vec<Option<ParamGrad>>,
}

impl Grads {
    pub fn new(n_params: usize) -> Self {
        Self {
            params: vec![None; n_params],
        }
    }

    fn accumulate(&mut self, id: ParamId, g: ParamGrad) {
        match &mut self.params[id] {
            Some(existing) => existing.add_into(g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: Grads) {
        if self.params.len() < other.params.len() {
            self.params.resize(other.params.len(), None);
        }
        for (id, g) in other.params.into_iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(id, g);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.params.iter_mut().flatten().for_each(|g| g.scale(c));
    }

    pub fn global_norm(&self) -> f64 {
        self.params.iter().flatten().map(ParamGrad::sq_norm).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.global_norm().is_finite()
    }
}

enum Value {
    Owned(Array2<f64>),
    Param(ParamId),
}

enum Op {
    Leaf,
    Gather { param: ParamId, ids: Vec<usize> },
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Array2<f64>, inv_std: Array1<f64> },
    Dropout { x: NodeId, mask: Array2<f64> },
    SliceCols { x: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Row { x: NodeId, index: usize },
    MeanRows(NodeId),
}

struct Node {
    value: Value,
    op: Op,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044_715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044_715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044_715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One recorded forward pass.
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self { store, nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> ArrayView2<'_, f64> {
        match &self.nodes[id].value {
            Value::Owned(a) => a.view(),
            Value::Param(p) => self.store.values[*p].view(),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
        });
        self.nodes.len() - 1
    }

    /// Rows `ids` of parameter table `param`.
    pub fn gather(&mut self, param: ParamId, ids: &[usize]) -> NodeId {
        let table = &self.store.values[param];
        let mut out = Array2::zeros((ids.len(), table.ncols()));
        for (r, &i) in ids.iter().enumerate() {
            out.row_mut(r).assign(&table.row(i));
        }
        self.push(out, Op::Gather { param, ids: ids.to_vec() })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.value(a) + &self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let v = &self.value(a) + &self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.value(a) * &self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).mapv(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).to_owned();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Row-wise layer normalisation with `1 × n` gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.to_owned();
        let mut inv_std = Array1::zeros(xv.nrows());
        for (r, mut row) in xhat.rows_mut().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std[r] = inv;
        }
        let out = &(&xhat * &self.value(gamma)) + &self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Inverted dropout with drop probability `p`.
    pub fn dropout<R: Rng>(&mut self, x: NodeId, p: f64, rng: &mut R) -> NodeId {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let shape = self.value(x).dim();
        let mask = Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let v = &self.value(x) * &mask;
        self.push(v, Op::Dropout { x, mask })
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("equal row counts");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("equal column counts");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn row(&mut self, x: NodeId, index: usize) -> NodeId {
        let v = self.value(x).slice(s![index..index + 1, ..]).to_owned();
        self.push(v, Op::Row { x, index })
    }

    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        self.push(v, Op::MeanRows(x))
    }

    /// Back-propagates `seed` (shaped like `output`) and returns parameter gradients.
    pub fn backward(&self, output: NodeId, seed: Array2<f64>) -> Grads {
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(output + 1);
        grads.resize_with(output + 1, || None);
        grads[output] = Some(seed);
        let mut out = Grads::new(self.store.len());
        fn acc(grads: &mut [Option<Array2<f64>>], id: NodeId, g: Array2<f64>) {
            match &mut grads[id] {
                Some(x) => *x += &g,
                slot @ None => *slot = Some(g),
            }
        }
        for id in (0..=output).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    if let Value::Param(p) = node.value {
                        if self.store.trainable[p] {
                            out.accumulate(p, ParamGrad::Dense(g));
                        }
                    }
                }
                Op::Gather { param, ids } => {
                    if self.store.trainable[*param] {
                        let mut rows: BTreeMap<usize, Array1<f64>> = BTreeMap::new();
                        for (r, &i) in ids.iter().enumerate() {
                            let gr = g.row(r).to_owned();
                            match rows.get_mut(&i) {
                                Some(x) => *x += &gr,
                                None => {
                                    rows.insert(i, gr);
                                }
                            }
                        }
                        out.accumulate(*param, ParamGrad::Rows(rows));
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(&self.value(*b));
                    let gb = g.t().dot(&self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.value(*b);
                    let gb = &g * &self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g.mapv(|v| v * c)),
                Op::Tanh(a) => {
                    let y = self.value(id);
                    let ga = ndarray::Zip::from(&g).and(&y).map_collect(|g, y| g * (1.0 - y * y));
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = self.value(id);
                    let ga = ndarray::Zip::from(&g).and(&y).map_collect(|g, y| g * y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let ga = ndarray::Zip::from(&g).and(&x).map_collect(|g, x| g * gelu_grad(*x));
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = self.value(id);
                    let mut ga = &g * &y;
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let s = grow.sum();
                        grow.zip_mut_with(&yrow, |gy, y| *gy -= y * s);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let ggamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * &self.value(*gamma);
                    let n = xhat.ncols() as f64;
                    let mut gx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let d = dxhat.row(r);
                        let xh = xhat.row(r);
                        let sd = d.sum();
                        let sdx = d.dot(&xh);
                        let inv = inv_std[r];
                        for c in 0..xhat.ncols() {
                            gx[[r, c]] = inv / n * (n * d[c] - sd - xh[c] * sdx);
                        }
                    }
                    acc(&mut grads, *gamma, ggamma);
                    acc(&mut grads, *beta, gbeta);
                    acc(&mut grads, *x, gx);
                }
                Op::Dropout { x, mask } => acc(&mut grads, *x, &g * mask),
                Op::SliceCols { x, start } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut c = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., c..c + w]).to_owned());
                        c += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut r = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![r..r + h, ..]).to_owned());
                        r += h;
                    }
                }
                Op::Row { x, index } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    gx.row_mut(*index).assign(&g.row(0));
                    acc(&mut grads, *x, gx);
                }
                Op::MeanRows(x) => {
                    let rows = self.value(*x).nrows();
                    let gx = g.broadcast((rows, g.ncols())).expect("row grad").mapv(|v| v / rows as f64);
                    acc(&mut grads, *x, gx);
                }
            }
        }
        out
    }
}
