//! Transformer encoder with factorised embeddings and a regression head on the first
//! (`[CLS]`) position.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::autograd::{NodeId, ParamId, ParamStore, Tape};
use super::{NeuralError, SequenceRegressor};
use crate::corpus::ClarificationRecord;
use crate::featurize::{compose_input, tokenize_for_encoder, InputSetting, TokenSequence, WordTokenizer};

/// Hard limit on encoder positions.
pub const MAX_POSITIONS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Width of the token, position and segment embeddings before projection.
    pub embedding_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub max_positions: usize,
    pub segment_types: usize,
    /// One set of layer weights reused by every layer.
    pub share_layers: bool,
    pub hidden_dropout: f64,
    pub init_std: f64,
    pub layer_norm_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

impl EncoderConfig {
    /// Two layers of width 64.
    pub fn tiny() -> Self {
        Self {
            embedding_dim: 32,
            hidden: 64,
            layers: 2,
            heads: 4,
            intermediate: 128,
            max_positions: MAX_POSITIONS,
            segment_types: 5,
            share_layers: false,
            hidden_dropout: 0.1,
            init_std: 0.02,
            layer_norm_eps: 1e-12,
        }
    }

    /// Under a thousand parameters with a ten-word vocabulary; used for gradient checks.
    pub fn micro() -> Self {
        Self {
            embedding_dim: 4,
            hidden: 8,
            layers: 1,
            heads: 2,
            intermediate: 16,
            max_positions: 16,
            segment_types: 5,
            share_layers: false,
            hidden_dropout: 0.1,
            init_std: 0.5,
            layer_norm_eps: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::InvalidConfig(m.to_string()));
        if self.hidden == 0 || self.embedding_dim == 0 || self.layers == 0 || self.intermediate == 0 {
            return bad("encoder dimensions must be positive");
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return bad("hidden must be a multiple of heads");
        }
        if !(2..=MAX_POSITIONS).contains(&self.max_positions) {
            return bad("max_positions must be in 2..=512");
        }
        if self.segment_types == 0 {
            return bad("segment_types must be positive");
        }
        if !(0.0..1.0).contains(&self.hidden_dropout) {
            return bad("hidden_dropout must be in [0, 1)");
        }
        Ok(())
    }
}

/// Where encoder weights come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EncoderSpec {
    /// [`EncoderConfig::tiny`], randomly initialised.
    TinyRandom,
    /// [`EncoderConfig::micro`], randomly initialised.
    MicroRandom,
    /// Any configuration, randomly initialised.
    Random { config: EncoderConfig },
    /// Named pretrained weights.
    Pretrained { name: String },
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::TinyRandom
    }
}

impl EncoderSpec {
    pub fn id(&self) -> String {
        match self {
            EncoderSpec::TinyRandom => "tiny-random".into(),
            EncoderSpec::MicroRandom => "micro-random".into(),
            EncoderSpec::Random { .. } => "random".into(),
            EncoderSpec::Pretrained { name } => name.clone(),
        }
    }

    fn resolve(&self) -> Result<EncoderConfig, NeuralError> {
        match self {
            EncoderSpec::TinyRandom => Ok(EncoderConfig::tiny()),
            EncoderSpec::MicroRandom => Ok(EncoderConfig::micro()),
            EncoderSpec::Random { config } => Ok(*config),
            EncoderSpec::Pretrained { name } => Err(NeuralError::EncoderUnavailable(format!(
                "no pretrained weights for `{name}` are bundled; use a random profile or load a saved checkpoint"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadActivation {
    #[default]
    Tanh,
    Gelu,
}

/// `Linear(H, hidden) → activation → dropout → Linear(hidden, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    /// Defaults to the encoder width.
    pub hidden: Option<usize>,
    pub activation: HeadActivation,
    pub dropout: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: None,
            activation: HeadActivation::Tanh,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Layout {
    tok: ParamId,
    pos: ParamId,
    seg: ParamId,
    emb_ln_g: ParamId,
    emb_ln_b: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
    layers: Vec<LayerParams>,
    head_w1: ParamId,
    head_b1: ParamId,
    head_w2: ParamId,
    head_b2: ParamId,
    out_scale: ParamId,
}

/// Encoder plus regression head for one input setting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderRegressor {
    encoder_id: String,
    config: EncoderConfig,
    head: HeadConfig,
    setting: InputSetting,
    max_results: usize,
    tokenizer: WordTokenizer,
    store: ParamStore,
    layout: Layout,
}

struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Init {
    fn normal(&mut self, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || self.normal.sample(&mut self.rng))
    }
}

impl EncoderRegressor {
    /// Builds a randomly initialised model whose vocabulary is `tokenizer`'s.
    pub fn build(
        setting: InputSetting,
        max_results: usize,
        spec: &EncoderSpec,
        head: &HeadConfig,
        tokenizer: WordTokenizer,
        seed: u64,
    ) -> Result<Self, NeuralError> {
        let config = spec.resolve()?;
        config.validate()?;
        if !(0.0..1.0).contains(&head.dropout) {
            return Err(NeuralError::InvalidConfig("head dropout must be in [0, 1)".into()));
        }
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, config.init_std).map_err(|e| NeuralError::InvalidConfig(e.to_string()))?,
        };
        let (e, h, f) = (config.embedding_dim, config.hidden, config.intermediate);
        let hh = head.hidden.unwrap_or(h);
        let mut s = ParamStore::default();
        let tok = s.add("embeddings.token", init.normal(tokenizer.vocab_size(), e), true);
        let pos = s.add("embeddings.position", init.normal(config.max_positions, e), true);
        let seg = s.add("embeddings.segment", init.normal(config.segment_types, e), true);
        let emb_ln_g = s.add("embeddings.ln.gain", Array2::ones((1, e)), false);
        let emb_ln_b = s.add("embeddings.ln.bias", Array2::zeros((1, e)), false);
        let proj_w = s.add("embeddings.projection.weight", init.normal(e, h), true);
        let proj_b = s.add("embeddings.projection.bias", Array2::zeros((1, h)), false);
        let n_distinct = if config.share_layers { 1 } else { config.layers };
        let mut distinct = Vec::with_capacity(n_distinct);
        for l in 0..n_distinct {
            let w = |name: &str, r: usize, c: usize, init: &mut Init, s: &mut ParamStore| {
                s.add(&format!("layer{l}.{name}.weight"), init.normal(r, c), true)
            };
            let wq = w("query", h, h, &mut init, &mut s);
            let wk = w("key", h, h, &mut init, &mut s);
            let wv = w("value", h, h, &mut init, &mut s);
            let wo = w("attn_out", h, h, &mut init, &mut s);
            let w1 = w("ffn_in", h, f, &mut init, &mut s);
            let w2 = w("ffn_out", f, h, &mut init, &mut s);
            let b = |name: &str, c: usize, s: &mut ParamStore| s.add(&format!("layer{l}.{name}"), Array2::zeros((1, c)), false);
            let bq = b("query.bias", h, &mut s);
            let bk = b("key.bias", h, &mut s);
            let bv = b("value.bias", h, &mut s);
            let bo = b("attn_out.bias", h, &mut s);
            let b1 = b("ffn_in.bias", f, &mut s);
            let b2 = b("ffn_out.bias", h, &mut s);
            let ln1_b = b("ln1.bias", h, &mut s);
            let ln2_b = b("ln2.bias", h, &mut s);
            let ln1_g = s.add(&format!("layer{l}.ln1.gain"), Array2::ones((1, h)), false);
            let ln2_g = s.add(&format!("layer{l}.ln2.gain"), Array2::ones((1, h)), false);
            distinct.push(LayerParams {
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln1_g,
                ln1_b,
                w1,
                b1,
                w2,
                b2,
                ln2_g,
                ln2_b,
            });
        }
        let layers = (0..config.layers).map(|l| distinct[l.min(n_distinct - 1)].clone()).collect();
        let head_w1 = s.add("head.dense.weight", init.normal(h, hh), true);
        let head_b1 = s.add("head.dense.bias", Array2::zeros((1, hh)), false);
        let head_w2 = s.add("head.out.weight", init.normal(hh, 1), true);
        let head_b2 = s.add("head.out.bias", Array2::zeros((1, 1)), false);
        let out_scale = s.add("head.out.scale", Array2::ones((1, 1)), false);
        s.freeze(out_scale);
        Ok(Self {
            encoder_id: spec.id(),
            config,
            head: *head,
            setting,
            max_results,
            tokenizer,
            store: s,
            layout: Layout {
                tok,
                pos,
                seg,
                emb_ln_g,
                emb_ln_b,
                proj_w,
                proj_b,
                layers,
                head_w1,
                head_b1,
                head_w2,
                head_b2,
                out_scale,
            },
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn head(&self) -> &HeadConfig {
        &self.head
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn tokenizer(&self) -> &WordTokenizer {
        &self.tokenizer
    }

    pub fn n_parameters(&self) -> usize {
        self.store.n_trainable()
    }

    /// Token budget: the configured positions, capped at 512.
    pub fn budget(&self) -> usize {
        self.config.max_positions.min(MAX_POSITIONS)
    }

    /// Output for an already tokenised sequence, evaluation mode.
    pub fn forward_sequence(&self, seq: &TokenSequence) -> f64 {
        let mut tape = Tape::new(&self.store);
        let out = self.forward(&mut tape, seq, None);
        tape.value(out)[[0, 0]]
    }
}

impl SequenceRegressor for EncoderRegressor {
    type Input = TokenSequence;

    fn setting(&self) -> InputSetting {
        self.setting
    }

    fn prepare(&self, record: &ClarificationRecord) -> Result<TokenSequence, NeuralError> {
        let input = compose_input(record, self.setting, self.max_results)?;
        Ok(tokenize_for_encoder(&input, &self.tokenizer, self.budget())?)
    }

    fn forward(&self, t: &mut Tape<'_>, seq: &TokenSequence, mut dropout: Option<&mut ChaCha8Rng>) -> NodeId {
        let c = &self.config;
        let lay = &self.layout;
        let p = c.hidden_dropout;
        let mut drop = |t: &mut Tape<'_>, x: NodeId, p: f64| match dropout.as_deref_mut() {
            Some(rng) => t.dropout(x, p, rng),
            None => x,
        };
        let len = seq.len().min(c.max_positions);
        let ids: Vec<usize> = seq.ids[..len].iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..len).collect();
        let segs: Vec<usize> = seq.segment_ids[..len]
            .iter()
            .map(|&s| (s as usize).min(c.segment_types - 1))
            .collect();
        let tok = t.gather(lay.tok, &ids);
        let pos = t.gather(lay.pos, &positions);
        let seg = t.gather(lay.seg, &segs);
        let e = t.add(tok, pos);
        let e = t.add(e, seg);
        let (g, b) = (t.param(lay.emb_ln_g), t.param(lay.emb_ln_b));
        let e = t.layer_norm(e, g, b, c.layer_norm_eps);
        let e = drop(t, e, p);
        let (pw, pb) = (t.param(lay.proj_w), t.param(lay.proj_b));
        let e = t.matmul(e, pw);
        let mut h = t.add_row(e, pb);
        let dh = c.hidden / c.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for l in &lay.layers {
            let linear = |t: &mut Tape<'_>, x: NodeId, w: ParamId, b: ParamId| {
                let (w, b) = (t.param(w), t.param(b));
                let y = t.matmul(x, w);
                t.add_row(y, b)
            };
            let q = linear(t, h, l.wq, l.bq);
            let k = linear(t, h, l.wk, l.bk);
            let v = linear(t, h, l.wv, l.bv);
            let mut heads = Vec::with_capacity(c.heads);
            for i in 0..c.heads {
                let qh = t.slice_cols(q, i * dh, dh);
                let kh = t.slice_cols(k, i * dh, dh);
                let vh = t.slice_cols(v, i * dh, dh);
                let scores = t.matmul_t(qh, kh);
                let scores = t.scale(scores, scale);
                let attn = t.softmax_rows(scores);
                heads.push(t.matmul(attn, vh));
            }
            let ctx = t.concat_cols(&heads);
            let a = linear(t, ctx, l.wo, l.bo);
            let a = drop(t, a, p);
            let r = t.add(h, a);
            let (g, b) = (t.param(l.ln1_g), t.param(l.ln1_b));
            h = t.layer_norm(r, g, b, c.layer_norm_eps);
            let f = linear(t, h, l.w1, l.b1);
            let f = t.gelu(f);
            let f = linear(t, f, l.w2, l.b2);
            let f = drop(t, f, p);
            let r = t.add(h, f);
            let (g, b) = (t.param(l.ln2_g), t.param(l.ln2_b));
            h = t.layer_norm(r, g, b, c.layer_norm_eps);
        }
        let cls = t.row(h, 0);
        let (w1, b1) = (t.param(lay.head_w1), t.param(lay.head_b1));
        let z = t.matmul(cls, w1);
        let z = t.add_row(z, b1);
        let z = match self.head.activation {
            HeadActivation::Tanh => t.tanh(z),
            HeadActivation::Gelu => t.gelu(z),
        };
        let z = drop(t, z, self.head.dropout);
        let (w2, b2, sc) = (t.param(lay.head_w2), t.param(lay.head_b2), t.param(lay.out_scale));
        let out = t.matmul(z, w2);
        let out = t.mul(out, sc);
        t.add_row(out, b2)
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn output_bias(&self) -> ParamId {
        self.layout.head_b2
    }

    fn output_scale(&self) -> ParamId {
        self.layout.out_scale
    }
}
