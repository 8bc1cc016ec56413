//! The five case encoders and their task heads.

mod head;

use std::path::PathBuf;

use ljp_tensor::{Checkpoint, ParamStore, Real, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Case, LabelVocabulary, TokenVocab, PAD};
use crate::encoders::{
    dropout, load_embedding_file, AttentionPool, Embedding, LabelWiseAttention, StackedBiGru, TransformerConfig,
    TransformerEncoder,
};
use crate::error::{Error, Result};

pub use head::{decide, MultilabelActivation, Prediction, Target, Task, TaskHead, IMPORTANCE_RANGE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    BigruAtt,
    Han,
    Lwan,
    FlatTrunc,
    HierEnc,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::BigruAtt,
        Architecture::Han,
        Architecture::Lwan,
        Architecture::FlatTrunc,
        Architecture::HierEnc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::BigruAtt => "bigru-att",
            Architecture::Han => "han",
            Architecture::Lwan => "lwan",
            Architecture::FlatTrunc => "flat-trunc",
            Architecture::HierEnc => "hier-enc",
        }
    }

    pub fn is_transformer(self) -> bool {
        matches!(self, Architecture::FlatTrunc | Architecture::HierEnc)
    }

    pub fn is_hierarchical(self) -> bool {
        matches!(self, Architecture::Han | Architecture::HierEnc)
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown architecture {s}")))
    }
}

/// Shape of the transformer stand-in. Its token embeddings have
/// `model_dim` columns regardless of [`ModelSpec::embedding_dim`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerSpec {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
}

impl Default for TransformerSpec {
    fn default() -> Self {
        let d = TransformerConfig::default();
        TransformerSpec {
            layers: d.layers,
            heads: d.heads,
            model_dim: d.model_dim,
            ff_dim: d.ff_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub task: Task,
    pub embedding_dim: usize,
    /// GRU hidden units per direction.
    pub hidden: usize,
    /// Stacked BiGRU layers.
    pub layers: usize,
    pub dropout: f64,
    pub word_dropout: f64,
    /// Word-token budget of a transformer input (the whole case for
    /// flat-trunc, each fact for hier-enc), excluding the classification
    /// position.
    pub max_len: usize,
    /// Label count; zero means "take it from the corpus".
    pub labels: usize,
    pub freeze_embeddings: bool,
    pub embeddings: Option<PathBuf>,
    pub multilabel_activation: MultilabelActivation,
    pub threshold: f64,
    pub transformer: TransformerSpec,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            arch: Architecture::BigruAtt,
            task: Task::Binary,
            embedding_dim: 200,
            hidden: 200,
            layers: 1,
            dropout: 0.1,
            word_dropout: 0.0,
            max_len: 512,
            labels: 0,
            freeze_embeddings: false,
            embeddings: None,
            multilabel_activation: MultilabelActivation::Sigmoid,
            threshold: 0.5,
            transformer: TransformerSpec::default(),
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.arch == Architecture::Lwan && self.task != Task::Multilabel {
            return bad(format!("lwan only supports the multilabel task, not {}", self.task.as_str()));
        }
        if self.arch == Architecture::Lwan && self.multilabel_activation != MultilabelActivation::Sigmoid {
            return bad("lwan scores each label with its own sigmoid".into());
        }
        if self.task == Task::Multilabel && self.labels == 0 {
            return bad("multilabel task needs at least one label".into());
        }
        if self.embedding_dim == 0 || self.hidden == 0 || self.max_len == 0 {
            return bad("embedding_dim, hidden and max_len must be positive".into());
        }
        if !(1..=2).contains(&self.layers) {
            return bad(format!("layers must be 1 or 2, got {}", self.layers));
        }
        for (name, v) in [("dropout", self.dropout), ("word_dropout", self.word_dropout)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold must lie in [0, 1], got {}", self.threshold));
        }
        if self.arch.is_transformer() {
            self.transformer_config().validate()?;
        }
        Ok(())
    }

    fn transformer_config(&self) -> TransformerConfig {
        TransformerConfig {
            layers: self.transformer.layers,
            heads: self.transformer.heads,
            model_dim: self.transformer.model_dim,
            ff_dim: self.transformer.ff_dim,
            max_positions: self.max_len + 1,
        }
    }

    /// Width of the token embedding table rows.
    pub fn token_dim(&self) -> usize {
        if self.arch.is_transformer() {
            self.transformer.model_dim
        } else {
            self.embedding_dim
        }
    }
}

/// Token ids of a case, one list per non-empty fact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseInput {
    pub facts: Vec<Vec<usize>>,
    /// Index in `Case::facts` of each entry of `facts`.
    pub fact_index: Vec<usize>,
}

impl CaseInput {
    pub fn from_ids(facts: Vec<Vec<usize>>) -> Self {
        let fact_index = (0..facts.len()).collect();
        CaseInput { facts, fact_index }
    }

    pub fn encode(case: &Case, vocab: &TokenVocab) -> Self {
        let mut facts = Vec::new();
        let mut fact_index = Vec::new();
        for (i, f) in case.facts.iter().enumerate() {
            let ids = vocab.encode(f);
            if !ids.is_empty() {
                facts.push(ids);
                fact_index.push(i);
            }
        }
        CaseInput { facts, fact_index }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Encoder {
    BigruAtt { rnn: StackedBiGru, pool: AttentionPool },
    Han {
        word_rnn: StackedBiGru,
        word_pool: AttentionPool,
        fact_rnn: StackedBiGru,
        fact_pool: AttentionPool,
    },
    Lwan { rnn: StackedBiGru, attention: LabelWiseAttention },
    FlatTrunc { encoder: TransformerEncoder },
    HierEnc { encoder: TransformerEncoder, pool: AttentionPool },
}

/// Attention variables recorded during one forward pass.
#[derive(Debug, Clone)]
enum AttentionVars {
    /// `1 × T` pooling weights.
    Pool(Var),
    /// `L × T` label-wise weights.
    LabelWise(Var),
    /// Last-layer head probabilities of a CLS-prefixed sequence.
    Cls(Vec<Var>),
    Han { words: Vec<Var>, facts: Var },
    Hier { words: Vec<Vec<Var>>, facts: Var },
}

/// Result of [`Network::forward`].
#[derive(Debug, Clone)]
pub struct Forward {
    /// `1 × K` activated output.
    pub output: Var,
    /// Token ids each attention vector ranges over (no CLS). Flat models have
    /// a single segment containing the separator ids.
    pub segments: Vec<Vec<usize>>,
    attention: AttentionVars,
}

/// Attention read back from a forward pass as plain numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    /// One vector per segment, aligned with [`Forward::segments`].
    pub words: Vec<Vec<f64>>,
    /// Weight of each fact, for hierarchical models.
    pub facts: Option<Vec<f64>>,
}

fn row_of<F: Real>(tape: &Tape<F>, v: Var, r: usize) -> Vec<f64> {
    tape.value(v).row_slice(r).iter().map(|x| x.as_f64()).collect()
}

/// Attention of the classification position on the other positions,
/// averaged over heads and renormalized without the CLS column.
fn cls_weights<F: Real>(tape: &Tape<F>, heads: &[Var]) -> Vec<f64> {
    let t = tape.shape(heads[0])[1];
    let mut acc = vec![0.0; t - 1];
    for &h in heads {
        for (a, x) in acc.iter_mut().zip(&tape.value(h).row_slice(0)[1..]) {
            *a += x.as_f64();
        }
    }
    let total: f64 = acc.iter().sum();
    if total > 0.0 {
        acc.iter_mut().for_each(|a| *a /= total);
    } else {
        let n = acc.len() as f64;
        acc.iter_mut().for_each(|a| *a = 1.0 / n);
    }
    acc
}

impl Forward {
    pub fn attention<F: Real>(&self, tape: &Tape<F>) -> AttentionWeights {
        match &self.attention {
            AttentionVars::Pool(a) => AttentionWeights {
                words: vec![row_of(tape, *a, 0)],
                facts: None,
            },
            AttentionVars::LabelWise(a) => {
                let v = tape.value(*a);
                let (l, t) = (v.rows(), v.last_dim());
                let mut mean = vec![0.0; t];
                for r in 0..l {
                    for (m, x) in mean.iter_mut().zip(v.row_slice(r)) {
                        *m += x.as_f64() / l as f64;
                    }
                }
                AttentionWeights {
                    words: vec![mean],
                    facts: None,
                }
            }
            AttentionVars::Cls(heads) => AttentionWeights {
                words: vec![cls_weights(tape, heads)],
                facts: None,
            },
            AttentionVars::Han { words, facts } => AttentionWeights {
                words: words.iter().map(|w| row_of(tape, *w, 0)).collect(),
                facts: Some(row_of(tape, *facts, 0)),
            },
            AttentionVars::Hier { words, facts } => AttentionWeights {
                words: words.iter().map(|h| cls_weights(tape, h)).collect(),
                facts: Some(row_of(tape, *facts, 0)),
            },
        }
    }

    /// Raw per-label weights of a label-wise model (`L × T`).
    pub fn label_attention<F: Real>(&self, tape: &Tape<F>) -> Option<Vec<Vec<f64>>> {
        match &self.attention {
            AttentionVars::LabelWise(a) => Some((0..tape.value(*a).rows()).map(|r| row_of(tape, *a, r)).collect()),
            _ => None,
        }
    }

    /// Every attention matrix kept by the pass: pooling, label-wise, and each
    /// head of the last transformer layer.
    pub fn attention_vars(&self) -> Vec<Var> {
        match &self.attention {
            AttentionVars::Pool(a) | AttentionVars::LabelWise(a) => vec![*a],
            AttentionVars::Cls(h) => h.clone(),
            AttentionVars::Han { words, facts } => words.iter().copied().chain([*facts]).collect(),
            AttentionVars::Hier { words, facts } => words.iter().flatten().copied().chain([*facts]).collect(),
        }
    }
}

fn mask_of(ids: &[usize]) -> Option<Vec<bool>> {
    ids.contains(&PAD).then(|| ids.iter().map(|&i| i != PAD).collect())
}

/// Layer structure of a model; parameters live in a separate store.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: ModelSpec,
    pub embedding: Embedding,
    pub head: TaskHead,
    /// Fact separator id (first id past the word vocabulary).
    pub sep: usize,
    /// Classification-position id.
    pub cls: usize,
    encoder: Encoder,
}

impl Network {
    /// Registers every parameter in `store`. The embedding table has two rows
    /// past the word vocabulary, for the separator and classification ids.
    pub fn build<F: Real>(spec: &ModelSpec, vocab_size: usize, store: &mut ParamStore<F>, rng: &mut impl rand::Rng) -> Result<Self> {
        spec.validate()?;
        let d = spec.token_dim();
        let embedding = Embedding::new(store, "embedding", vocab_size + 2, d, !spec.freeze_embeddings, rng)?;
        let (h, n) = (spec.hidden, spec.layers);
        let (encoder, out_dim) = match spec.arch {
            Architecture::BigruAtt => {
                let rnn = StackedBiGru::new(store, "rnn", d, h, n, rng)?;
                let pool = AttentionPool::new(store, "pool", rnn.output_dim(), rng)?;
                (Encoder::BigruAtt { rnn, pool }, 2 * h)
            }
            Architecture::Han => {
                let word_rnn = StackedBiGru::new(store, "word_rnn", d, h, n, rng)?;
                let word_pool = AttentionPool::new(store, "word_pool", 2 * h, rng)?;
                let fact_rnn = StackedBiGru::new(store, "fact_rnn", 2 * h, h, n, rng)?;
                let fact_pool = AttentionPool::new(store, "fact_pool", 2 * h, rng)?;
                (
                    Encoder::Han {
                        word_rnn,
                        word_pool,
                        fact_rnn,
                        fact_pool,
                    },
                    2 * h,
                )
            }
            Architecture::Lwan => {
                let rnn = StackedBiGru::new(store, "rnn", d, h, n, rng)?;
                let attention = LabelWiseAttention::new(store, "label_attention", 2 * h, spec.labels, rng)?;
                (Encoder::Lwan { rnn, attention }, 2 * h)
            }
            Architecture::FlatTrunc => {
                let encoder = TransformerEncoder::new(store, "transformer", spec.transformer_config(), rng)?;
                (Encoder::FlatTrunc { encoder }, d)
            }
            Architecture::HierEnc => {
                let encoder = TransformerEncoder::new(store, "transformer", spec.transformer_config(), rng)?;
                let pool = AttentionPool::new(store, "fact_pool", d, rng)?;
                (Encoder::HierEnc { encoder, pool }, d)
            }
        };
        let head = if spec.arch == Architecture::Lwan {
            TaskHead::label_wise(store, out_dim, spec.labels, spec.threshold, rng)?
        } else {
            TaskHead::new(store, out_dim, spec.task, spec.labels, spec.multilabel_activation, spec.threshold, rng)?
        };
        Ok(Network {
            spec: spec.clone(),
            embedding,
            head,
            sep: vocab_size,
            cls: vocab_size + 1,
            encoder,
        })
    }

    /// Facts joined by the separator id.
    pub fn flatten(&self, input: &CaseInput) -> Vec<usize> {
        let mut ids = Vec::new();
        for (i, f) in input.facts.iter().enumerate() {
            if i > 0 {
                ids.push(self.sep);
            }
            ids.extend_from_slice(f);
        }
        ids
    }

    fn cls_sequence(&self, ids: &[usize]) -> Vec<usize> {
        let keep = ids.len().min(self.spec.max_len);
        std::iter::once(self.cls).chain(ids[..keep].iter().copied()).collect()
    }

    /// Runs the model on one case. Dropout is active only when `rng` is given.
    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        input: &CaseInput,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        if input.facts.is_empty() || input.facts.iter().all(|f| f.is_empty()) {
            return Err(Error::Argument("case has no tokens".into()));
        }
        let p = self.spec.dropout;
        let (pooled, segments, attention) = match &self.encoder {
            Encoder::BigruAtt { rnn, pool } => {
                let ids = self.flatten(input);
                let mask = mask_of(&ids);
                let x = self.embedding.embed(tape, store, &ids)?;
                let x = dropout(tape, x, p, rng.as_deref_mut())?;
                let hs = rnn.encode(tape, store, x, mask.as_deref())?;
                let (h, a) = pool.pool(tape, store, hs, mask.as_deref())?;
                (h, vec![ids], AttentionVars::Pool(a))
            }
            Encoder::Lwan { rnn, attention } => {
                let ids = self.flatten(input);
                let mask = mask_of(&ids);
                let x = self.embedding.embed(tape, store, &ids)?;
                let x = dropout(tape, x, p, rng.as_deref_mut())?;
                let hs = rnn.encode(tape, store, x, mask.as_deref())?;
                let (e, a) = attention.attend(tape, store, hs, mask.as_deref())?;
                (e, vec![ids], AttentionVars::LabelWise(a))
            }
            Encoder::Han {
                word_rnn,
                word_pool,
                fact_rnn,
                fact_pool,
            } => {
                let mut fact_vecs = Vec::with_capacity(input.facts.len());
                let mut words = Vec::with_capacity(input.facts.len());
                for ids in &input.facts {
                    let mask = mask_of(ids);
                    let x = self.embedding.embed(tape, store, ids)?;
                    let x = dropout(tape, x, p, rng.as_deref_mut())?;
                    let hs = word_rnn.encode(tape, store, x, mask.as_deref())?;
                    let (h, a) = word_pool.pool(tape, store, hs, mask.as_deref())?;
                    fact_vecs.push(h);
                    words.push(a);
                }
                let facts = tape.concat(&fact_vecs, 0)?;
                let hs = fact_rnn.encode(tape, store, facts, None)?;
                let (h, a) = fact_pool.pool(tape, store, hs, None)?;
                (h, input.facts.clone(), AttentionVars::Han { words, facts: a })
            }
            Encoder::FlatTrunc { encoder } => {
                let ids = self.cls_sequence(&self.flatten(input));
                let mask = mask_of(&ids);
                let enc = self.encode_transformer(tape, store, encoder, &ids, mask.as_deref(), rng.as_deref_mut())?;
                let h = tape.slice(enc.states, 0, 0, 1)?;
                let last = enc.attention.last().cloned().unwrap_or_default();
                (h, vec![ids[1..].to_vec()], AttentionVars::Cls(last))
            }
            Encoder::HierEnc { encoder, pool } => {
                let mut cls_rows = Vec::with_capacity(input.facts.len());
                let mut words = Vec::with_capacity(input.facts.len());
                let mut segments = Vec::with_capacity(input.facts.len());
                for f in &input.facts {
                    let ids = self.cls_sequence(f);
                    let mask = mask_of(&ids);
                    let enc = self.encode_transformer(tape, store, encoder, &ids, mask.as_deref(), rng.as_deref_mut())?;
                    cls_rows.push(tape.slice(enc.states, 0, 0, 1)?);
                    words.push(enc.attention.last().cloned().unwrap_or_default());
                    segments.push(ids[1..].to_vec());
                }
                let facts = tape.concat(&cls_rows, 0)?;
                let (h, a) = pool.pool(tape, store, facts, None)?;
                (h, segments, AttentionVars::Hier { words, facts: a })
            }
        };
        let pooled = dropout(tape, pooled, p, rng)?;
        let output = match self.encoder {
            Encoder::Lwan { .. } => self.head.apply_label_wise(tape, store, pooled)?,
            _ => self.head.apply(tape, store, pooled)?,
        };
        Ok(Forward {
            output,
            segments,
            attention,
        })
    }

    fn encode_transformer<F: Real>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        encoder: &TransformerEncoder,
        ids: &[usize],
        mask: Option<&[bool]>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<crate::encoders::Encoded> {
        if self.spec.dropout > 0.0 && rng.is_some() {
            encoder.encode_with(tape, store, &self.embedding, ids, mask, |tape, x| {
                dropout(tape, x, self.spec.dropout, rng)
            })
        } else {
            encoder.encode(tape, store, &self.embedding, ids, mask)
        }
    }
}

/// A network together with its parameters and vocabularies.
#[derive(Debug, Clone)]
pub struct Model<F: Real> {
    pub network: Network,
    pub store: ParamStore<F>,
    pub vocab: TokenVocab,
    pub labels: LabelVocabulary,
}

impl<F: Real> Model<F> {
    /// Fresh Glorot-initialized model; pretrained vectors are copied in when
    /// the spec names an embedding file. Frozen tables without a file are
    /// keyed by token, like pretrained vectors.
    pub fn new(spec: &ModelSpec, vocab: TokenVocab, labels: LabelVocabulary, seed: u64) -> Result<Self> {
        let mut model = Self::skeleton(spec, vocab, labels, seed)?;
        if spec.freeze_embeddings && spec.embeddings.is_none() {
            let mut tokens = model.vocab.tokens().to_vec();
            tokens.extend(["<sep>".to_string(), "<cls>".to_string()]);
            model.network.embedding.key_rows(&mut model.store, &tokens, seed);
        }
        if let Some(path) = &spec.embeddings {
            let table = load_embedding_file(path)?;
            let hits = model
                .network
                .embedding
                .load_pretrained(&mut model.store, model.vocab.tokens(), &table)?;
            log::info!("{hits} of {} tokens found in {}", model.vocab.len(), path.display());
        }
        Ok(model)
    }

    fn skeleton(spec: &ModelSpec, vocab: TokenVocab, labels: LabelVocabulary, seed: u64) -> Result<Self> {
        let mut spec = spec.clone();
        if spec.labels == 0 {
            spec.labels = labels.len();
        }
        if spec.task == Task::Multilabel && spec.labels != labels.len() {
            return Err(Error::Config(format!(
                "spec declares {} labels, vocabulary has {}",
                spec.labels,
                labels.len()
            )));
        }
        let mut store = ParamStore::new();
        let network = Network::build(&spec, vocab.len(), &mut store, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Model {
            network,
            store,
            vocab,
            labels,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.network.spec
    }

    pub fn encode(&self, case: &Case) -> CaseInput {
        CaseInput::encode(case, &self.vocab)
    }

    /// Inference pass on a fresh tape; returns the tape for attention reads.
    pub fn run(&self, input: &CaseInput) -> Result<(Tape<F>, Forward)> {
        let mut tape = Tape::inference();
        let fwd = self.network.forward(&mut tape, &self.store, input, None)?;
        Ok((tape, fwd))
    }

    pub fn output(&self, input: &CaseInput) -> Result<Vec<f64>> {
        let (tape, fwd) = self.run(input)?;
        Ok(tape.value(fwd.output).to_f64_vec())
    }

    pub fn predict(&self, case: &Case) -> Result<Prediction> {
        let out = self.output(&self.encode(case))?;
        self.network.head.predict(self.spec().task, &out)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint<F>> {
        let mut ck = Checkpoint::from_params(&self.store);
        ck.meta.insert("spec".into(), serde_json::to_string(self.spec())?);
        ck.meta.insert("vocab".into(), serde_json::to_string(&self.vocab)?);
        ck.meta.insert("labels".into(), serde_json::to_string(&self.labels)?);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint<F>) -> Result<Self> {
        let field = |k: &str| {
            ck.meta
                .get(k)
                .ok_or_else(|| Error::State(format!("checkpoint lacks `{k}` metadata")))
        };
        let spec: ModelSpec = serde_json::from_str(field("spec")?)?;
        let vocab: TokenVocab = serde_json::from_str(field("vocab")?)?;
        let labels: LabelVocabulary = serde_json::from_str(field("labels")?)?;
        let mut model = Self::skeleton(&spec, vocab, labels, 0)?;
        ck.restore_into(&mut model.store)?;
        Ok(model)
    }
}
