//! Token tagger: embedding table, a one-hidden-layer encoder over a fixed
//! context window, and an affine classifier with row softmax.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelScheme, PretrainedEmbeddings, Vocabulary, PAD};
use crate::diffcore::{
    softmax_rows, DiffError, Graph, ParamId, Parameter, ParameterSet, Tensor, Var,
};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("cannot encode an empty sentence")]
    EmptySentence,
    #[error("pretrained vectors have dimension {got}, embedding dimension is {expected}")]
    EmbeddingDim { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub window_radius: usize,
    pub dropout: f64,
    pub freeze_embeddings: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden_dim: 64,
            window_radius: 2,
            dropout: 0.5,
            freeze_embeddings: true,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(ModelError::Config("dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn window_width(&self) -> usize {
        2 * self.window_radius + 1
    }
}

/// Whether dropout is active, and with which mask seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NerModel {
    config: EncoderConfig,
    vocab: Vocabulary,
    scheme: LabelScheme,
    params: ParameterSet,
    embedding: ParamId,
    hidden_w: ParamId,
    hidden_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// Graph handles produced by [`NerModel::forward`].
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub hidden: Var,
    pub probs: Var,
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let values = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::matrix(rows, cols, values).expect("positive dims")
}

impl NerModel {
    /// Seeded uniform initialization with bound `sqrt(6 / fan_in)`; biases
    /// and the PAD row start at zero.
    pub fn init(
        config: EncoderConfig,
        vocab: Vocabulary,
        scheme: LabelScheme,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (e, h, k) = (config.embed_dim, config.hidden_dim, scheme.num_tags());
        let window = config.window_width() * e;

        let mut params = ParameterSet::new();
        let mut table = uniform(vocab.len(), e, (6.0 / e as f64).sqrt(), &mut rng);
        table.row_mut(PAD).fill(0.0);
        let mut emb = Parameter::new("embedding", table);
        emb.frozen = config.freeze_embeddings;
        let embedding = params.add(emb);
        let hidden_w = params.add(Parameter::new(
            "encoder.weight",
            uniform(window, h, (6.0 / window as f64).sqrt(), &mut rng),
        ));
        let hidden_b = params.add(Parameter::new("encoder.bias", Tensor::zeros(&[1, h])));
        let out_w = params.add(Parameter::new(
            "classifier.weight",
            uniform(h, k, (6.0 / h as f64).sqrt(), &mut rng),
        ));
        let out_b = params.add(Parameter::new("classifier.bias", Tensor::zeros(&[1, k])));
        Ok(Self {
            config,
            vocab,
            scheme,
            params,
            embedding,
            hidden_w,
            hidden_b,
            out_w,
            out_b,
        })
    }

    /// Overwrites embedding rows of tokens that have a pretrained vector.
    /// Returns how many rows were set.
    pub fn load_pretrained(&mut self, vectors: &PretrainedEmbeddings) -> Result<usize, ModelError> {
        if vectors.dim != self.config.embed_dim {
            return Err(ModelError::EmbeddingDim {
                expected: self.config.embed_dim,
                got: vectors.dim,
            });
        }
        let mut set = 0;
        let table = &mut self.params.get_mut(self.embedding).value;
        for (id, token) in self.vocab.tokens().iter().enumerate() {
            if let Some(v) = vectors.get(token) {
                table.row_mut(id).copy_from_slice(v);
                set += 1;
            }
        }
        Ok(set)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn scheme(&self) -> &LabelScheme {
        &self.scheme
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn embedding_id(&self) -> ParamId {
        self.embedding
    }

    pub fn classifier_ids(&self) -> (ParamId, ParamId) {
        (self.out_w, self.out_b)
    }

    /// Context windows of vocabulary ids for every token of every sentence,
    /// concatenated in order. Edges are padded with [`PAD`].
    pub fn windows<T: AsRef<[String]>>(
        &self,
        sentences: &[T],
    ) -> Result<Vec<Vec<usize>>, ModelError> {
        let r = self.config.window_radius as isize;
        let mut out = Vec::new();
        for s in sentences {
            let tokens = s.as_ref();
            if tokens.is_empty() {
                return Err(ModelError::EmptySentence);
            }
            let ids = self.vocab.encode(tokens);
            let n = ids.len() as isize;
            for i in 0..n {
                out.push(
                    (i - r..=i + r)
                        .map(|j| {
                            if j < 0 || j >= n {
                                PAD
                            } else {
                                ids[j as usize]
                            }
                        })
                        .collect(),
                );
            }
        }
        Ok(out)
    }

    /// Builds the encoder and classifier over pre-computed windows.
    pub fn forward(
        &self,
        g: &mut Graph,
        windows: &[Vec<usize>],
        mode: Mode,
    ) -> Result<Forward, ModelError> {
        let hidden = self.encode_graph(g, windows, mode)?;
        let probs = self.classify_graph(g, hidden)?;
        Ok(Forward { hidden, probs })
    }

    pub fn encode_graph(
        &self,
        g: &mut Graph,
        windows: &[Vec<usize>],
        mode: Mode,
    ) -> Result<Var, ModelError> {
        if windows.is_empty() {
            return Err(ModelError::EmptySentence);
        }
        let table = g.param(&self.params, self.embedding);
        let x = g.gather(table, windows)?;
        let w = g.param(&self.params, self.hidden_w);
        let b = g.param(&self.params, self.hidden_b);
        let pre = g.affine(x, w, Some(b))?;
        let mut hidden = g.tanh(pre);
        if let Mode::Train { seed } = mode {
            let p = self.config.dropout;
            if p > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let shape = g.value(hidden).shape().to_vec();
                let keep = 1.0 / (1.0 - p);
                let len: usize = shape.iter().product();
                let mask: Vec<f64> = (0..len)
                    .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                    .collect();
                let mask = g.input(Tensor::new(shape, mask)?);
                hidden = g.mul(hidden, mask)?;
            }
        }
        Ok(hidden)
    }

    pub fn classify_graph(&self, g: &mut Graph, hidden: Var) -> Result<Var, ModelError> {
        let w = g.param(&self.params, self.out_w);
        let b = g.param(&self.params, self.out_b);
        let logits = g.affine(hidden, w, Some(b))?;
        Ok(g.softmax(logits))
    }

    /// Hidden vectors of one sentence, one row per token.
    pub fn encode(&self, tokens: &[String], mode: Mode) -> Result<Tensor, ModelError> {
        let windows = self.windows(&[tokens])?;
        let mut g = Graph::new();
        let h = self.encode_graph(&mut g, &windows, mode)?;
        Ok(g.value(h).clone())
    }

    /// Probability rows over the tag set for pre-computed hidden vectors.
    pub fn classify(&self, hidden: &Tensor) -> Result<Tensor, ModelError> {
        let h = self.config.hidden_dim;
        if hidden.cols() != h {
            return Err(DiffError::ShapeMismatch {
                op: "classify",
                detail: format!("hidden has {} columns, model expects {h}", hidden.cols()),
            }
            .into());
        }
        let w = &self.params.get(self.out_w).value;
        let b = &self.params.get(self.out_b).value;
        let k = w.cols();
        let mut logits = Vec::with_capacity(hidden.rows() * k);
        for r in 0..hidden.rows() {
            let row = hidden.row(r);
            for j in 0..k {
                let mut acc = b.values()[j];
                for (i, x) in row.iter().enumerate() {
                    acc += x * w.get(i, j);
                }
                logits.push(acc);
            }
        }
        Ok(softmax_rows(&Tensor::matrix(hidden.rows(), k, logits)?))
    }

    /// Inference-mode hidden vectors and probabilities for many sentences,
    /// evaluated in chunks.
    pub fn infer<T: AsRef<[String]>>(
        &self,
        sentences: &[T],
    ) -> Result<(Tensor, Tensor), ModelError> {
        const CHUNK: usize = 256;
        let mut hidden = Vec::new();
        let mut probs = Vec::new();
        let mut rows = 0;
        for chunk in sentences.chunks(CHUNK) {
            let windows = self.windows(chunk)?;
            let mut g = Graph::new();
            let f = self.forward(&mut g, &windows, Mode::Eval)?;
            rows += windows.len();
            hidden.extend_from_slice(g.value(f.hidden).values());
            probs.extend_from_slice(g.value(f.probs).values());
        }
        Ok((
            Tensor::matrix(rows, self.config.hidden_dim, hidden)?,
            Tensor::matrix(rows, self.scheme.num_tags(), probs)?,
        ))
    }

    /// Argmax tag per token (lowest index on ties), split back per sentence.
    pub fn predict<T: AsRef<[String]>>(
        &self,
        sentences: &[T],
    ) -> Result<Vec<Vec<usize>>, ModelError> {
        let (_, probs) = self.infer(sentences)?;
        let mut out = Vec::with_capacity(sentences.len());
        let mut row = 0;
        for s in sentences {
            let n = s.as_ref().len();
            out.push(
                (row..row + n)
                    .map(|r| crate::losses::hard_label(probs.row(r)))
                    .collect(),
            );
            row += n;
        }
        Ok(out)
    }
}

const CHECKPOINT_MAGIC: &str = "prokd-checkpoint/1";

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: EncoderConfig,
    vocab: Vocabulary,
    scheme: LabelScheme,
    params: Vec<ParamMeta>,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
    frozen: bool,
}

impl NerModel {
    /// Header line, one JSON metadata line, then every parameter's values as
    /// little-endian `f64` in parameter order.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), ModelError> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            scheme: self.scheme.clone(),
            params: self
                .params
                .iter()
                .map(|p| ParamMeta {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    frozen: p.frozen,
                })
                .collect(),
        };
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        let json =
            serde_json::to_string(&meta).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        writeln!(w, "{json}")?;
        for p in self.params.iter() {
            for v in p.value.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<Self, ModelError> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint(format!(
                "bad header {:?}",
                line.trim_end()
            )));
        }
        line.clear();
        r.read_line(&mut line)?;
        let meta: CheckpointMeta =
            serde_json::from_str(&line).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let mut model = Self::init(meta.config, meta.vocab, meta.scheme)?;
        if meta.params.len() != model.params.len() {
            return Err(ModelError::Checkpoint("parameter count mismatch".into()));
        }
        for (p, m) in model.params.iter_mut().zip(&meta.params) {
            if p.name != m.name || p.value.shape() != m.shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {} does not match",
                    m.name
                )));
            }
            p.frozen = m.frozen;
            let mut buf = [0u8; 8];
            for v in p.value.values_mut() {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(ModelError::Checkpoint(format!(
                "{} trailing bytes",
                rest.len()
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        self.write_checkpoint(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::read_checkpoint(BufReader::new(File::open(path)?))
    }
}
