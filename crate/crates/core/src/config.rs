//! Run configuration for training: a flat set of keys that can come from a
//! `key = value` file, command-line flags, or defaults, in that order of
//! increasing precedence.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::encoder::{CnnConfig, EncoderConfig};
use crate::error::{Error, IoContext, Result};
use crate::model::{EncoderSpec, ModelConfig};
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    #[default]
    Transformer,
    Cnn,
}

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

/// Every training setting. Unset fields are filled by [`RunConfig::resolve`].
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Training corpus (line-delimited JSON).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Validation corpus; defaults to the last 10% of the training corpus.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    /// Vocabulary file, one token per line; built from the corpus if absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    /// Code list, one per line; defaults to the codes seen in training.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub codes: Option<PathBuf>,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Metrics log path; defaults to `<out>/metrics.csv`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics_log: Option<PathBuf>,

    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderKind>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_blocks: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intermediate: Option<usize>,
    /// Embedding rows; defaults to the vocabulary size.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_positions: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub include_pooler: Option<bool>,
    /// Surround each note with [CLS] ... [SEP].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wrap_special: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seg_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seg_stride: Option<usize>,
    /// Notes are truncated to this many tokens.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_seq_len: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cnn_embed: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cnn_filters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cnn_kernel: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cnn_max_words: Option<usize>,
    /// Minimum count for a word to enter an auto-built vocabulary.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_word_freq: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),* $(,)?) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

macro_rules! fill {
    ($dst:ident; $($f:ident = $v:expr),* $(,)?) => {
        $( if $dst.$f.is_none() { $dst.$f = Some($v); } )*
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// `self` with every field set in `flags` replaced.
    pub fn overlaid(mut self, flags: &RunConfig) -> Self {
        overlay!(self, flags;
            corpus, val, vocab, codes, out, metrics_log, encoder, num_blocks, hidden, heads,
            intermediate, vocab_size, max_positions, include_pooler, wrap_special, seg_len,
            seg_stride, max_seq_len, cnn_embed, cnn_filters, cnn_kernel, cnn_max_words,
            min_word_freq, lr, batch_size, max_steps, eval_every, seed);
        self
    }

    /// Fills every unset key except the optional paths (`val`, `vocab`,
    /// `codes`, `vocab_size`), which have data-dependent fallbacks.
    pub fn resolve(mut self) -> Result<Self> {
        if self.corpus.is_none() {
            return Err(Error::Config("missing required --corpus".into()));
        }
        let max_steps = self.max_steps.unwrap_or(1_000_000);
        let out = self.out.clone().unwrap_or_else(|| PathBuf::from("checkpoint"));
        fill!(self;
            metrics_log = out.join("metrics.csv"),
            out = out,
            encoder = EncoderKind::Transformer,
            num_blocks = 2,
            hidden = 256,
            heads = 4,
            intermediate = 1024,
            max_positions = 512,
            include_pooler = true,
            wrap_special = false,
            seg_len = 512,
            seg_stride = 0,
            max_seq_len = 512,
            cnn_embed = 100,
            cnn_filters = 50,
            cnn_kernel = 9,
            cnn_max_words = 2500,
            min_word_freq = 3,
            lr = 2e-4,
            batch_size = 4,
            max_steps = max_steps,
            eval_every = max_steps.clamp(1, 10_000),
            seed = 0,
        );
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Model layout for `num_labels` codes over a vocabulary of `vocab_len`
    /// tokens. Requires a resolved config.
    pub fn model_config(&self, num_labels: usize, vocab_len: usize) -> Result<ModelConfig> {
        let vocab_size = self.vocab_size.unwrap_or(vocab_len);
        if vocab_size < vocab_len {
            return Err(Error::Config(format!(
                "vocab_size {vocab_size} is smaller than the vocabulary ({vocab_len} tokens)"
            )));
        }
        let get = |v: Option<usize>, key: &str| v.ok_or_else(|| Error::Config(format!("{key} unresolved")));
        let encoder = match self.encoder.unwrap_or_default() {
            EncoderKind::Transformer => EncoderSpec::Transformer(EncoderConfig {
                num_blocks: get(self.num_blocks, "num_blocks")?,
                hidden: get(self.hidden, "hidden")?,
                heads: get(self.heads, "heads")?,
                intermediate: get(self.intermediate, "intermediate")?,
                vocab_size,
                max_positions: get(self.max_positions, "max_positions")?,
                type_vocab: 2,
                seg_len: get(self.seg_len, "seg_len")?,
                include_pooler: self.include_pooler.unwrap_or(true),
            }),
            EncoderKind::Cnn => EncoderSpec::Cnn(CnnConfig {
                embed_dim: get(self.cnn_embed, "cnn_embed")?,
                filters: get(self.cnn_filters, "cnn_filters")?,
                kernel: get(self.cnn_kernel, "cnn_kernel")?,
                max_words: get(self.cnn_max_words, "cnn_max_words")?,
                vocab_size,
            }),
        };
        Ok(ModelConfig {
            num_labels,
            seg_stride: self.seg_stride.unwrap_or(0),
            max_seq_len: get(self.max_seq_len, "max_seq_len")?,
            encoder,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            lr: self.lr.unwrap_or(d.lr),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            max_steps: self.max_steps.unwrap_or(d.max_steps),
            eval_every: self.eval_every.unwrap_or(d.eval_every),
            seed: self.seed.unwrap_or(d.seed),
            threshold_grid: d.threshold_grid,
        }
    }
}
