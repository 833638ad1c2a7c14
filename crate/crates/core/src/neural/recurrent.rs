//! Multi-layer bidirectional LSTM over a frozen word-embedding table, mean-pooled into a
//! linear head.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::autograd::{NodeId, ParamId, ParamStore, Tape};
use super::{NeuralError, SequenceRegressor};
use crate::corpus::ClarificationRecord;
use crate::featurize::{compose_input, InputSetting, WordTokenizer, UNK};

/// Source of the static word vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EmbeddingSpec {
    /// Random N(0, 1/dim) vectors.
    TinyRandom { dim: usize },
    /// Whitespace-separated text vectors (`word v1 v2 ...`, one per line).
    Text { path: PathBuf },
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec::TinyRandom { dim: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecurrentConfig {
    pub embedding: EmbeddingSpec,
    pub layers: usize,
    /// Hidden width per direction.
    pub hidden: usize,
    /// Dropout between stacked layers and before the head.
    pub dropout: f64,
    pub max_tokens: usize,
}

impl Default for RecurrentConfig {
    fn default() -> Self {
        Self {
            embedding: EmbeddingSpec::default(),
            layers: 2,
            hidden: 32,
            dropout: 0.1,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Direction {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecurrentRegressor {
    config: RecurrentConfig,
    setting: InputSetting,
    max_results: usize,
    tokenizer: WordTokenizer,
    store: ParamStore,
    table: ParamId,
    layers: Vec<[Direction; 2]>,
    head_w: ParamId,
    head_b: ParamId,
    out_scale: ParamId,
    /// Words of the tokenizer found in the embedding source.
    coverage: usize,
}

fn read_text_vectors(path: &PathBuf, wanted: &HashMap<&str, usize>) -> Result<(usize, HashMap<usize, Vec<f64>>), NeuralError> {
    let io = |source| NeuralError::Io {
        path: path.clone(),
        source,
    };
    let file = std::fs::File::open(path).map_err(|e| NeuralError::EmbeddingUnavailable(format!("{}: {e}", path.display())))?;
    let mut dim = 0;
    let mut found = HashMap::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io)?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<f64> = parts.filter_map(|v| v.parse().ok()).collect();
        if values.is_empty() {
            continue;
        }
        if dim == 0 {
            dim = values.len();
        }
        if values.len() != dim {
            continue;
        }
        if let Some(&id) = wanted.get(word) {
            found.entry(id).or_insert(values);
        }
    }
    if dim == 0 {
        return Err(NeuralError::EmbeddingUnavailable(format!("{}: no vectors", path.display())));
    }
    Ok((dim, found))
}

impl RecurrentRegressor {
    pub fn build(
        setting: InputSetting,
        max_results: usize,
        config: &RecurrentConfig,
        tokenizer: WordTokenizer,
        seed: u64,
    ) -> Result<Self, NeuralError> {
        if config.layers == 0 || config.hidden == 0 || config.max_tokens == 0 {
            return Err(NeuralError::InvalidConfig("recurrent dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(NeuralError::InvalidConfig("dropout must be in [0, 1)".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = tokenizer.vocab_size();
        let (table, coverage) = match &config.embedding {
            EmbeddingSpec::TinyRandom { dim } => {
                if *dim == 0 {
                    return Err(NeuralError::InvalidConfig("embedding dim must be positive".into()));
                }
                let n = Normal::new(0.0, 1.0 / (*dim as f64).sqrt()).expect("valid");
                (Array2::from_shape_simple_fn((v, *dim), || n.sample(&mut rng)), v)
            }
            EmbeddingSpec::Text { path } => {
                let wanted: HashMap<&str, usize> = tokenizer.words().iter().map(|w| (w.as_str(), tokenizer.token_id(w) as usize)).collect();
                let (dim, found) = read_text_vectors(path, &wanted)?;
                let mut t = Array2::zeros((v, dim));
                for (id, vec) in &found {
                    t.row_mut(*id).assign(&ndarray::ArrayView1::from(vec.as_slice()));
                }
                (t, found.len())
            }
        };
        let dim = table.ncols();
        let h = config.hidden;
        let mut s = ParamStore::default();
        let table_id = s.add("embeddings.static", table, false);
        s.freeze(table_id);
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let input = if l == 0 { dim } else { 2 * h };
            let bound = 1.0 / (h as f64).sqrt();
            let dir = |name: &str, s: &mut ParamStore, rng: &mut ChaCha8Rng| {
                let u = rand_distr::Uniform::new_inclusive(-bound, bound).expect("valid bounds");
                let wx = s.add(&format!("lstm{l}.{name}.wx"), Array2::from_shape_simple_fn((input, 4 * h), || u.sample(rng)), true);
                let wh = s.add(&format!("lstm{l}.{name}.wh"), Array2::from_shape_simple_fn((h, 4 * h), || u.sample(rng)), true);
                let mut bias = Array2::zeros((1, 4 * h));
                bias.slice_mut(ndarray::s![.., h..2 * h]).fill(1.0);
                let b = s.add(&format!("lstm{l}.{name}.bias"), bias, false);
                Direction { wx, wh, b }
            };
            let f = dir("forward", &mut s, &mut rng);
            let b = dir("backward", &mut s, &mut rng);
            layers.push([f, b]);
        }
        let n = Normal::new(0.0, 1.0 / (2.0 * h as f64).sqrt()).expect("valid");
        let head_w = s.add("head.weight", Array2::from_shape_simple_fn((2 * h, 1), || n.sample(&mut rng)), true);
        let head_b = s.add("head.bias", Array2::zeros((1, 1)), false);
        let out_scale = s.add("head.scale", Array2::ones((1, 1)), false);
        s.freeze(out_scale);
        Ok(Self {
            config: config.clone(),
            setting,
            max_results,
            tokenizer,
            store: s,
            table: table_id,
            layers,
            head_w,
            head_b,
            out_scale,
            coverage,
        })
    }

    pub fn config(&self) -> &RecurrentConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &WordTokenizer {
        &self.tokenizer
    }

    pub fn embedding_coverage(&self) -> usize {
        self.coverage
    }

    fn run_direction(&self, t: &mut Tape<'_>, x: NodeId, d: &Direction, reverse: bool) -> NodeId {
        let h = self.config.hidden;
        let steps = t.value(x).nrows();
        let (wx, wh, b) = (t.param(d.wx), t.param(d.wh), t.param(d.b));
        let pre = t.matmul(x, wx);
        let pre = t.add_row(pre, b);
        let mut hs: Vec<NodeId> = Vec::with_capacity(steps);
        let mut state: Option<(NodeId, NodeId)> = None;
        for k in 0..steps {
            let step = if reverse { steps - 1 - k } else { k };
            let mut z = t.row(pre, step);
            if let Some((hp, _)) = state {
                let r = t.matmul(hp, wh);
                z = t.add(z, r);
            }
            let zi = t.slice_cols(z, 0, h);
            let zf = t.slice_cols(z, h, h);
            let zg = t.slice_cols(z, 2 * h, h);
            let zo = t.slice_cols(z, 3 * h, h);
            let i = t.sigmoid(zi);
            let g = t.tanh(zg);
            let o = t.sigmoid(zo);
            let ig = t.mul(i, g);
            let c = match state {
                Some((_, cp)) => {
                    let f = t.sigmoid(zf);
                    let fc = t.mul(f, cp);
                    t.add(fc, ig)
                }
                None => ig,
            };
            let tc = t.tanh(c);
            let hn = t.mul(o, tc);
            hs.push(hn);
            state = Some((hn, c));
        }
        if reverse {
            hs.reverse();
        }
        t.concat_rows(&hs)
    }
}

impl SequenceRegressor for RecurrentRegressor {
    type Input = Vec<u32>;

    fn setting(&self) -> InputSetting {
        self.setting
    }

    fn prepare(&self, record: &ClarificationRecord) -> Result<Vec<u32>, NeuralError> {
        let input = compose_input(record, self.setting, self.max_results)?;
        let mut ids = self.tokenizer.encode(&input.full_text());
        ids.truncate(self.config.max_tokens);
        if ids.is_empty() {
            ids.push(UNK);
        }
        Ok(ids)
    }

    fn forward(&self, t: &mut Tape<'_>, input: &Vec<u32>, mut dropout: Option<&mut ChaCha8Rng>) -> NodeId {
        let ids: Vec<usize> = input.iter().map(|&i| i as usize).collect();
        let mut x = t.gather(self.table, &ids);
        for (l, dirs) in self.layers.iter().enumerate() {
            if l > 0 {
                if let Some(rng) = dropout.as_deref_mut() {
                    x = t.dropout(x, self.config.dropout, rng);
                }
            }
            let f = self.run_direction(t, x, &dirs[0], false);
            let b = self.run_direction(t, x, &dirs[1], true);
            x = t.concat_cols(&[f, b]);
        }
        let mut pooled = t.mean_rows(x);
        if let Some(rng) = dropout.as_deref_mut() {
            pooled = t.dropout(pooled, self.config.dropout, rng);
        }
        let (w, b, sc) = (t.param(self.head_w), t.param(self.head_b), t.param(self.out_scale));
        let y = t.matmul(pooled, w);
        let y = t.mul(y, sc);
        t.add_row(y, b)
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn output_bias(&self) -> ParamId {
        self.head_b
    }

    fn output_scale(&self) -> ParamId {
        self.out_scale
    }
}
