//! The full classifier: an encoder producing per-token vectors followed by
//! the per-label attention head.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamGrads, ParamStore, Tape, Var};
use crate::checkpoint;
use crate::corpus::{LabelSet, SparseLabels};
use crate::encoder::{CnnConfig, CnnEncoder, EncoderConfig, TransformerEncoder};
use crate::error::{Error, IoContext, Result};
use crate::init::{allocate, ParamSpec};
use crate::label_attention::LabelHead;
use crate::long_context::{encode_long, padded_len, plan_segments};
use crate::tensor::Real;
use crate::tokenizer::{TokenSequence, Tokenizer, Vocab};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderSpec {
    Transformer(EncoderConfig),
    Cnn(CnnConfig),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_labels: usize,
    /// Tokens shared by consecutive windows; 0 means disjoint windows.
    pub seg_stride: usize,
    /// Notes are truncated to this many tokens before anything else.
    pub max_seq_len: usize,
    pub encoder: EncoderSpec,
}

#[derive(Clone, Debug, PartialEq)]
enum Encoder {
    Transformer(TransformerEncoder),
    Cnn(CnnEncoder),
}

/// Parameter-free description of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    config: ModelConfig,
    encoder: Encoder,
    head: LabelHead,
}

impl Architecture {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.max_seq_len == 0 {
            return Err(Error::Config("max_seq_len must be at least 1".into()));
        }
        let (encoder, hidden) = match &config.encoder {
            EncoderSpec::Transformer(c) => {
                if config.seg_stride >= c.seg_len {
                    return Err(Error::Config(format!(
                        "seg_stride {} must be smaller than seg_len {}",
                        config.seg_stride, c.seg_len
                    )));
                }
                (Encoder::Transformer(TransformerEncoder::new(c.clone(), "encoder.")?), c.hidden)
            }
            EncoderSpec::Cnn(c) => (Encoder::Cnn(CnnEncoder::new(c.clone(), "encoder.")?), c.filters),
        };
        let head = LabelHead::new(config.num_labels, hidden, "head.")?;
        Ok(Self {
            config,
            encoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_labels(&self) -> usize {
        self.config.num_labels
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = match &self.encoder {
            Encoder::Transformer(e) => e.param_specs(),
            Encoder::Cnn(e) => e.param_specs(),
        };
        specs.extend(self.head.param_specs());
        specs
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore<f32>> {
        let mut store = ParamStore::new();
        allocate(&self.param_specs(), &mut ChaCha8Rng::seed_from_u64(seed), &mut store)?;
        Ok(store)
    }

    /// Token count actually consumed for an input of `len` tokens.
    pub fn effective_len(&self, len: usize) -> usize {
        let cap = match &self.encoder {
            Encoder::Transformer(_) => self.config.max_seq_len,
            Encoder::Cnn(c) => c.config.max_words.min(self.config.max_seq_len),
        };
        len.min(cap)
    }

    /// Per-token vectors (`s×d`) for the truncated input.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, ids: &[u32]) -> Result<Var> {
        let ids = &ids[..self.effective_len(ids.len())];
        match &self.encoder {
            Encoder::Transformer(enc) => {
                let seq = TokenSequence::new(ids.to_vec());
                let seg_len = enc.config.seg_len;
                let stride = self.config.seg_stride;
                let plan = plan_segments(padded_len(seq.len, seg_len, stride)?, seg_len, stride)?;
                encode_long(tape, enc, &seq, &plan)
            }
            Encoder::Cnn(enc) => enc.encode(tape, ids),
        }
    }

    /// Label probabilities (length `K`).
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, ids: &[u32]) -> Result<Var> {
        let e = self.encode(tape, ids)?;
        self.head.predict(tape, e)
    }

    /// Probabilities and summed binary cross-entropy for one example.
    pub fn loss<T: Real>(&self, tape: &mut Tape<T>, ids: &[u32], labels: &SparseLabels) -> Result<(Var, Var)> {
        let probs = self.forward(tape, ids)?;
        let targets: Vec<T> = labels.dense(self.num_labels());
        let loss = tape.bce(probs, &targets)?;
        Ok((probs, loss))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub params: ParamStore<f32>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let arch = Architecture::new(config)?;
        let params = arch.init_params(seed)?;
        Ok(Self { arch, params })
    }

    pub fn predict(&self, ids: &[u32]) -> Result<Vec<f32>> {
        let mut tape = Tape::inference(&self.params);
        let probs = self.arch.forward(&mut tape, ids)?;
        Ok(tape.value(probs).data().to_vec())
    }

    pub fn loss_and_grads(&self, ids: &[u32], labels: &SparseLabels) -> Result<(f32, ParamGrads<f32>)> {
        let mut tape = Tape::new(&self.params);
        let (_, loss) = self.arch.loss(&mut tape, ids, labels)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], grads))
    }
}

/// How raw text becomes input ids.
#[derive(Clone, Debug, PartialEq)]
pub enum TextPipeline {
    WordPiece(Tokenizer),
    Words(Vocab),
}

impl TextPipeline {
    pub fn encode(&self, text: &str) -> TokenSequence {
        match self {
            TextPipeline::WordPiece(t) => t.tokenize(text),
            TextPipeline::Words(v) => v.lookup_words(text),
        }
    }

    pub fn vocab(&self) -> &Vocab {
        match self {
            TextPipeline::WordPiece(t) => t.vocab(),
            TextPipeline::Words(v) => v,
        }
    }
}

const CONFIG_FILE: &str = "model.toml";
const VOCAB_FILE: &str = "vocab.txt";
const CODES_FILE: &str = "codes.txt";

#[derive(Serialize, Deserialize)]
struct StoredConfig {
    threshold: f64,
    wrap_special: bool,
    model: ModelConfig,
}

/// A trained model together with its vocabulary, label set and decision
/// threshold; the unit that is saved to and loaded from a checkpoint
/// directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub model: Model,
    pub pipeline: TextPipeline,
    pub labels: LabelSet,
    pub threshold: f64,
}

impl Classifier {
    pub fn probabilities(&self, text: &str) -> Result<Vec<f32>> {
        let seq = self.pipeline.encode(text);
        if seq.len == 0 {
            return Err(Error::Empty("note text produced no tokens".into()));
        }
        self.model.predict(&seq.ids)
    }

    /// Labels ranked by probability, highest first.
    pub fn rank(&self, text: &str, top_n: usize) -> Result<Vec<(String, f32)>> {
        let probs = self.probabilities(text)?;
        let mut ranked: Vec<(String, f32)> = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| (self.labels.code(i).unwrap_or("?").to_string(), p))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(top_n);
        Ok(ranked)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(dir, &self.model.params)?;
        let stored = StoredConfig {
            threshold: self.threshold,
            wrap_special: matches!(&self.pipeline, TextPipeline::WordPiece(t) if t.wrap_special),
            model: self.model.arch.config().clone(),
        };
        let text = toml::to_string(&stored).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).context(|| format!("writing {}", p.display()))
        };
        write(CONFIG_FILE, text)?;
        write(VOCAB_FILE, self.pipeline.vocab().to_file_contents())?;
        write(CODES_FILE, self.labels.to_file_contents())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&cfg_path).context(|| format!("reading {}", cfg_path.display()))?;
        let stored: StoredConfig =
            toml::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", cfg_path.display())))?;
        let arch = Architecture::new(stored.model)?;
        let params = checkpoint::load(dir)?;
        let expected: Vec<(String, Vec<usize>)> =
            arch.param_specs().into_iter().map(|s| (s.name, s.shape)).collect();
        let found: Vec<(String, Vec<usize>)> =
            params.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect();
        if expected != found {
            return Err(Error::Checkpoint("parameters do not match the stored model config".into()));
        }
        let vocab = Vocab::from_file(&dir.join(VOCAB_FILE))?;
        let pipeline = match arch.config().encoder {
            EncoderSpec::Transformer(_) => {
                let mut t = Tokenizer::new(vocab);
                t.wrap_special = stored.wrap_special;
                TextPipeline::WordPiece(t)
            }
            EncoderSpec::Cnn(_) => TextPipeline::Words(vocab),
        };
        let labels = LabelSet::from_file(&dir.join(CODES_FILE))?;
        if labels.len() != arch.num_labels() {
            return Err(Error::LabelMismatch {
                checkpoint: arch.num_labels(),
                corpus: labels.len(),
            });
        }
        Ok(Self {
            model: Model { arch, params },
            pipeline,
            labels,
            threshold: stored.threshold,
        })
    }
}
