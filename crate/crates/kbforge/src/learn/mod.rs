//! The multimodal classifier: learned embeddings, one shared bidirectional
//! LSTM with attention over marker-annotated sentences, and a softmax head
//! over the concatenated textual representations plus the sparse extended
//! feature indicators. Trained noise-aware against label-model marginals.

mod check;
mod net;
mod train;

pub use check::{check_gradients, GradCheckReport};
pub use net::{attention_pool, bilstm, lstm_step, Gradients};
pub use train::{batch_loss, predict, train, TrainedModel};

use crate::cand::Candidate;
use crate::doc::Document;
use indexmap::IndexMap;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("registry mismatch: feature column {column} outside model registry of width {width}")]
    RegistryMismatch { column: usize, width: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (loss {loss})")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub d_emb: usize,
    pub d_h: usize,
    pub d_a: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Sentences are truncated to this many tokens, markers preserved.
    pub max_tokens: usize,
    /// When false the textual path is ablated: representations are zero and
    /// only the extended feature indicators drive the head.
    pub use_textual: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d_emb: 64,
            d_h: 64,
            d_a: 64,
            learning_rate: 0.1,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            clip_norm: 5.0,
            max_tokens: 128,
            use_textual: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let positive = [
            ("d_emb", self.d_emb),
            ("d_h", self.d_h),
            ("d_a", self.d_a),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("max_tokens", self.max_tokens),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(LearnError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.learning_rate <= 0.0 || self.clip_norm <= 0.0 {
            return Err(LearnError::InvalidConfig(
                "learning_rate and clip_norm must be positive".into(),
            ));
        }
        if self.max_tokens < 3 {
            return Err(LearnError::InvalidConfig("max_tokens must fit a marked token".into()));
        }
        Ok(())
    }
}

pub const OOV_TOKEN: &str = "⟨oov⟩";

pub fn open_marker(slot: usize) -> String {
    format!("⟨c{slot}⟩")
}

pub fn close_marker(slot: usize) -> String {
    format!("⟨/c{slot}⟩")
}

/// Token-to-row map with reserved marker tokens and an OOV bucket at row 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: IndexMap<String, usize>,
}

impl Vocabulary {
    /// Build from token sequences in a fixed order; markers for every slot
    /// are always present.
    pub fn build<'a>(arity: usize, sequences: impl Iterator<Item = &'a [String]>) -> Self {
        let mut tokens = IndexMap::new();
        tokens.insert(OOV_TOKEN.to_string(), 0);
        for slot in 0..arity {
            let idx = tokens.len();
            tokens.insert(open_marker(slot), idx);
            let idx = tokens.len();
            tokens.insert(close_marker(slot), idx);
        }
        for seq in sequences {
            for tok in seq {
                if !tokens.contains_key(tok) {
                    let idx = tokens.len();
                    tokens.insert(tok.clone(), idx);
                }
            }
        }
        Vocabulary { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Row index for a token, falling back to the OOV bucket.
    pub fn index_of(&self, token: &str) -> usize {
        self.tokens.get(token).copied().unwrap_or(0)
    }
}

/// Marker-annotated lemma sequence for one slot of a candidate.
///
/// The mention's sentence lemmas get `⟨c{slot}⟩`/`⟨/c{slot}⟩` inserted
/// around the span; overlong sequences keep a window around the markers.
pub fn build_sequence(doc: &Document, candidate: &Candidate, slot: usize, max_tokens: usize) -> Vec<String> {
    let mention = &candidate.mentions[slot];
    let sent = doc.node(mention.span.sentence).sentence.as_ref().expect("sentence attrs");
    let (start, end) = (mention.span.word_start, mention.span.word_end);
    let mut seq = Vec::with_capacity(sent.len() + 2);
    seq.extend(sent.lemmas[..start].iter().cloned());
    seq.push(open_marker(slot));
    seq.extend(sent.lemmas[start..=end].iter().cloned());
    seq.push(close_marker(slot));
    seq.extend(sent.lemmas[end + 1..].iter().cloned());

    let total = seq.len();
    if total <= max_tokens {
        return seq;
    }
    let open_idx = start;
    let close_idx = end + 2;
    let span = close_idx - open_idx + 1;
    if span >= max_tokens {
        // The marked span itself does not fit; keep its head and pin the
        // close marker at the end.
        let mut out = seq[open_idx..open_idx + max_tokens].to_vec();
        out[max_tokens - 1] = close_marker(slot);
        return out;
    }
    let left = (max_tokens - span) / 2;
    let window_start = open_idx.saturating_sub(left).min(total - max_tokens);
    seq[window_start..window_start + max_tokens].to_vec()
}

/// One direction's gate parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub w_i: Array2<f64>,
    pub u_i: Array2<f64>,
    pub b_i: Array1<f64>,
    pub w_f: Array2<f64>,
    pub u_f: Array2<f64>,
    pub b_f: Array1<f64>,
    pub w_o: Array2<f64>,
    pub u_o: Array2<f64>,
    pub b_o: Array1<f64>,
    pub w_c: Array2<f64>,
    pub u_c: Array2<f64>,
    pub b_c: Array1<f64>,
}

impl LstmParams {
    pub fn zeros(d_h: usize, d_emb: usize) -> Self {
        LstmParams {
            w_i: Array2::zeros((d_h, d_emb)),
            u_i: Array2::zeros((d_h, d_h)),
            b_i: Array1::zeros(d_h),
            w_f: Array2::zeros((d_h, d_emb)),
            u_f: Array2::zeros((d_h, d_h)),
            b_f: Array1::zeros(d_h),
            w_o: Array2::zeros((d_h, d_emb)),
            u_o: Array2::zeros((d_h, d_h)),
            b_o: Array1::zeros(d_h),
            w_c: Array2::zeros((d_h, d_emb)),
            u_c: Array2::zeros((d_h, d_h)),
            b_c: Array1::zeros(d_h),
        }
    }

    fn init(rng: &mut ChaCha8Rng, d_h: usize, d_emb: usize) -> Self {
        let mut p = Self::zeros(d_h, d_emb);
        for w in [&mut p.w_i, &mut p.u_i, &mut p.w_f, &mut p.u_f, &mut p.w_o, &mut p.u_o, &mut p.w_c, &mut p.u_c] {
            fill_uniform(w, rng);
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub w_w: Array2<f64>,
    pub b_w: Array1<f64>,
    pub u_w: Array1<f64>,
}

impl AttentionParams {
    pub fn zeros(d_a: usize, d_h2: usize) -> Self {
        AttentionParams {
            w_w: Array2::zeros((d_a, d_h2)),
            b_w: Array1::zeros(d_a),
            u_w: Array1::zeros(d_a),
        }
    }
}

/// Two-logit softmax head over `[t_1 .. t_n]` and feature indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub w_text: Array2<f64>,
    pub w_feat: Array2<f64>,
    pub bias: Array1<f64>,
}

impl HeadParams {
    pub fn zeros(text_width: usize, num_features: usize) -> Self {
        HeadParams {
            w_text: Array2::zeros((2, text_width)),
            w_feat: Array2::zeros((2, num_features)),
            bias: Array1::zeros(2),
        }
    }
}

fn fill_uniform<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>, rng: &mut ChaCha8Rng) {
    for v in a.iter_mut() {
        *v = rng.gen_range(-0.05..0.05);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodalModel {
    pub config: TrainConfig,
    pub arity: usize,
    pub num_features: usize,
    pub vocab: Vocabulary,
    pub embeddings: Array2<f64>,
    pub forward_lstm: LstmParams,
    pub backward_lstm: LstmParams,
    pub attention: AttentionParams,
    pub head: HeadParams,
}

impl MultimodalModel {
    /// Fresh model with seeded uniform(-0.05, 0.05) weights, zero biases, and
    /// a zero head so the initial output is exactly 0.5.
    pub fn init(config: TrainConfig, vocab: Vocabulary, arity: usize, num_features: usize) -> Result<Self, LearnError> {
        config.validate()?;
        if arity == 0 {
            return Err(LearnError::InvalidConfig("arity must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut embeddings = Array2::zeros((vocab.len(), config.d_emb));
        fill_uniform(&mut embeddings, &mut rng);
        let forward_lstm = LstmParams::init(&mut rng, config.d_h, config.d_emb);
        let backward_lstm = LstmParams::init(&mut rng, config.d_h, config.d_emb);
        let mut attention = AttentionParams::zeros(config.d_a, 2 * config.d_h);
        fill_uniform(&mut attention.w_w, &mut rng);
        fill_uniform(&mut attention.u_w, &mut rng);
        // Textual representations pool the attention's hidden vectors, so the
        // head's textual width is arity * d_a.
        let head = HeadParams::zeros(arity * config.d_a, num_features);
        Ok(MultimodalModel {
            config,
            arity,
            num_features,
            vocab,
            embeddings,
            forward_lstm,
            backward_lstm,
            attention,
            head,
        })
    }

    pub fn text_width(&self) -> usize {
        self.arity * self.config.d_a
    }

    /// All parameter tensors, in a fixed order shared with [`Gradients`].
    pub fn tensors(&self) -> Vec<(&'static str, TensorRef<'_>)> {
        use TensorRef::*;
        let mut v = vec![("embeddings", M(&self.embeddings))];
        for (prefix, p) in [("fwd", &self.forward_lstm), ("bwd", &self.backward_lstm)] {
            v.extend(lstm_tensor_refs(prefix, p));
        }
        v.push(("attn.w_w", M(&self.attention.w_w)));
        v.push(("attn.b_w", V(&self.attention.b_w)));
        v.push(("attn.u_w", V(&self.attention.u_w)));
        v.push(("head.w_text", M(&self.head.w_text)));
        v.push(("head.w_feat", M(&self.head.w_feat)));
        v.push(("head.bias", V(&self.head.bias)));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, TensorMut<'_>)> {
        use TensorMut::*;
        let mut v: Vec<(&'static str, TensorMut<'_>)> = vec![("embeddings", M(&mut self.embeddings))];
        for (prefix, p) in [("fwd", &mut self.forward_lstm), ("bwd", &mut self.backward_lstm)] {
            v.extend(lstm_tensor_muts(prefix, p));
        }
        v.push(("attn.w_w", M(&mut self.attention.w_w)));
        v.push(("attn.b_w", V(&mut self.attention.b_w)));
        v.push(("attn.u_w", V(&mut self.attention.u_w)));
        v.push(("head.w_text", M(&mut self.head.w_text)));
        v.push(("head.w_feat", M(&mut self.head.w_feat)));
        v.push(("head.bias", V(&mut self.head.bias)));
        v
    }

    pub fn write_checkpoint<W: std::io::Write>(&self, w: W) -> serde_json::Result<()> {
        serde_json::to_writer(w, self)
    }

    pub fn read_checkpoint<R: std::io::Read>(r: R) -> serde_json::Result<Self> {
        serde_json::from_reader(r)
    }
}

pub enum TensorRef<'a> {
    M(&'a Array2<f64>),
    V(&'a Array1<f64>),
}

pub enum TensorMut<'a> {
    M(&'a mut Array2<f64>),
    V(&'a mut Array1<f64>),
}

impl TensorRef<'_> {
    pub fn len(&self) -> usize {
        match self {
            TensorRef::M(a) => a.len(),
            TensorRef::V(a) => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self, idx: usize) -> f64 {
        match self {
            TensorRef::M(a) => *a.as_slice().expect("standard layout").get(idx).expect("index"),
            TensorRef::V(a) => a[idx],
        }
    }
}

impl TensorMut<'_> {
    pub fn len(&self) -> usize {
        match self {
            TensorMut::M(a) => a.len(),
            TensorMut::V(a) => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat_mut(&mut self, idx: usize) -> &mut f64 {
        match self {
            TensorMut::M(a) => a.as_slice_mut().expect("standard layout").get_mut(idx).expect("index"),
            TensorMut::V(a) => &mut a[idx],
        }
    }
}

fn lstm_tensor_refs<'a>(prefix: &'static str, p: &'a LstmParams) -> Vec<(&'static str, TensorRef<'a>)> {
    use TensorRef::*;
    vec![
        (lstm_static_name(prefix, "w_i"), M(&p.w_i)),
        (lstm_static_name(prefix, "u_i"), M(&p.u_i)),
        (lstm_static_name(prefix, "b_i"), V(&p.b_i)),
        (lstm_static_name(prefix, "w_f"), M(&p.w_f)),
        (lstm_static_name(prefix, "u_f"), M(&p.u_f)),
        (lstm_static_name(prefix, "b_f"), V(&p.b_f)),
        (lstm_static_name(prefix, "w_o"), M(&p.w_o)),
        (lstm_static_name(prefix, "u_o"), M(&p.u_o)),
        (lstm_static_name(prefix, "b_o"), V(&p.b_o)),
        (lstm_static_name(prefix, "w_c"), M(&p.w_c)),
        (lstm_static_name(prefix, "u_c"), M(&p.u_c)),
        (lstm_static_name(prefix, "b_c"), V(&p.b_c)),
    ]
}

fn lstm_tensor_muts<'a>(prefix: &'static str, p: &'a mut LstmParams) -> Vec<(&'static str, TensorMut<'a>)> {
    let LstmParams { w_i, u_i, b_i, w_f, u_f, b_f, w_o, u_o, b_o, w_c, u_c, b_c } = p;
    use TensorMut::*;
    vec![
        (lstm_static_name(prefix, "w_i"), M(w_i)),
        (lstm_static_name(prefix, "u_i"), M(u_i)),
        (lstm_static_name(prefix, "b_i"), V(b_i)),
        (lstm_static_name(prefix, "w_f"), M(w_f)),
        (lstm_static_name(prefix, "u_f"), M(u_f)),
        (lstm_static_name(prefix, "b_f"), V(b_f)),
        (lstm_static_name(prefix, "w_o"), M(w_o)),
        (lstm_static_name(prefix, "u_o"), M(u_o)),
        (lstm_static_name(prefix, "b_o"), V(b_o)),
        (lstm_static_name(prefix, "w_c"), M(w_c)),
        (lstm_static_name(prefix, "u_c"), M(u_c)),
        (lstm_static_name(prefix, "b_c"), V(b_c)),
    ]
}

fn lstm_static_name(prefix: &str, field: &str) -> &'static str {
    // A fixed table keeps tensor names 'static without allocation.
    const NAMES: &[(&str, &str, &str)] = &[
        ("fwd", "w_i", "fwd.w_i"), ("fwd", "u_i", "fwd.u_i"), ("fwd", "b_i", "fwd.b_i"),
        ("fwd", "w_f", "fwd.w_f"), ("fwd", "u_f", "fwd.u_f"), ("fwd", "b_f", "fwd.b_f"),
        ("fwd", "w_o", "fwd.w_o"), ("fwd", "u_o", "fwd.u_o"), ("fwd", "b_o", "fwd.b_o"),
        ("fwd", "w_c", "fwd.w_c"), ("fwd", "u_c", "fwd.u_c"), ("fwd", "b_c", "fwd.b_c"),
        ("bwd", "w_i", "bwd.w_i"), ("bwd", "u_i", "bwd.u_i"), ("bwd", "b_i", "bwd.b_i"),
        ("bwd", "w_f", "bwd.w_f"), ("bwd", "u_f", "bwd.u_f"), ("bwd", "b_f", "bwd.b_f"),
        ("bwd", "w_o", "bwd.w_o"), ("bwd", "u_o", "bwd.u_o"), ("bwd", "b_o", "bwd.b_o"),
        ("bwd", "w_c", "bwd.w_c"), ("bwd", "u_c", "bwd.u_c"), ("bwd", "b_c", "bwd.b_c"),
    ];
    NAMES
        .iter()
        .find(|(p, f, _)| *p == prefix && *f == field)
        .map(|(_, _, full)| *full)
        .expect("known lstm tensor")
}

/// One training/prediction example: per-slot token index sequences, active
/// feature columns, and the noise-aware target marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub sequences: Vec<Vec<usize>>,
    pub feature_cols: Vec<usize>,
    pub target: f64,
}
