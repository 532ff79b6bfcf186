//! BERT-style transformer encoder applied to one fixed-length segment.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::init::{Init, ParamSpec};
use crate::tensor::Real;

use super::SegmentEncoder;

/// Layer-norm epsilon used throughout the encoder.
pub const LN_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_blocks: usize,
    pub hidden: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub type_vocab: usize,
    pub seg_len: usize,
    /// Allocate the (unused) pooler so parameter totals match BERT checkpoints.
    pub include_pooler: bool,
}

impl EncoderConfig {
    /// Two blocks, 256-wide, four heads: the small uncased BERT layout.
    pub fn small_bert() -> Self {
        Self {
            num_blocks: 2,
            hidden: 256,
            heads: 4,
            intermediate: 1024,
            vocab_size: 30522,
            max_positions: 512,
            type_vocab: 2,
            seg_len: 512,
            include_pooler: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.hidden == 0 || self.heads == 0 {
            return fail("hidden and heads must be positive".into());
        }
        if self.hidden % self.heads != 0 {
            return fail(format!("hidden {} is not divisible by heads {}", self.hidden, self.heads));
        }
        if self.seg_len == 0 || self.seg_len > self.max_positions {
            return fail(format!(
                "seg_len {} must be in 1..={} (max_positions)",
                self.seg_len, self.max_positions
            ));
        }
        if self.vocab_size == 0 || self.type_vocab == 0 {
            return fail("vocab_size and type_vocab must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Every parameter tensor, in allocation order, with names relative to
    /// the encoder prefix.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        use Init::*;
        let (d, i) = (self.hidden, self.intermediate);
        let mut specs = vec![
            ParamSpec::new("embeddings.word", &[self.vocab_size, d], TruncatedNormal),
            ParamSpec::new("embeddings.position", &[self.max_positions, d], TruncatedNormal),
            ParamSpec::new("embeddings.type", &[self.type_vocab, d], TruncatedNormal),
            ParamSpec::new("embeddings.ln.gamma", &[d], Ones),
            ParamSpec::new("embeddings.ln.beta", &[d], Zeros),
        ];
        for b in 0..self.num_blocks {
            let p = |s: &str| format!("block{b}.{s}");
            for proj in ["q", "k", "v", "o"] {
                specs.push(ParamSpec::new(p(&format!("attn.{proj}.weight")), &[d, d], TruncatedNormal));
                specs.push(ParamSpec::new(p(&format!("attn.{proj}.bias")), &[d], Zeros));
            }
            specs.push(ParamSpec::new(p("attn_ln.gamma"), &[d], Ones));
            specs.push(ParamSpec::new(p("attn_ln.beta"), &[d], Zeros));
            specs.push(ParamSpec::new(p("ffn.in.weight"), &[d, i], TruncatedNormal));
            specs.push(ParamSpec::new(p("ffn.in.bias"), &[i], Zeros));
            specs.push(ParamSpec::new(p("ffn.out.weight"), &[i, d], TruncatedNormal));
            specs.push(ParamSpec::new(p("ffn.out.bias"), &[d], Zeros));
            specs.push(ParamSpec::new(p("ffn_ln.gamma"), &[d], Ones));
            specs.push(ParamSpec::new(p("ffn_ln.beta"), &[d], Zeros));
        }
        if self.include_pooler {
            specs.push(ParamSpec::new("pooler.weight", &[d, d], TruncatedNormal));
            specs.push(ParamSpec::new("pooler.bias", &[d], Zeros));
        }
        specs
    }
}

/// Closed-form scalar count for an encoder configuration.
pub fn count_parameters(cfg: &EncoderConfig) -> u64 {
    let d = cfg.hidden as u64;
    let i = cfg.intermediate as u64;
    let embeddings = (cfg.vocab_size as u64 + cfg.max_positions as u64 + cfg.type_vocab as u64) * d + 2 * d;
    let attention = 4 * (d * d + d) + 2 * d;
    let ffn = (d * i + i) + (i * d + d) + 2 * d;
    let pooler = if cfg.include_pooler { d * d + d } else { 0 };
    embeddings + cfg.num_blocks as u64 * (attention + ffn) + pooler
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerEncoder {
    pub config: EncoderConfig,
    prefix: String,
}

impl TransformerEncoder {
    pub fn new(config: EncoderConfig, prefix: impl Into<String>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            prefix: prefix.into(),
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = self.config.param_specs();
        for s in &mut specs {
            s.name = format!("{}{}", self.prefix, s.name);
        }
        specs
    }

    fn p<T: Real>(&self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        tape.param(&format!("{}{}", self.prefix, name))
    }

    fn linear<T: Real>(&self, tape: &mut Tape<T>, x: Var, name: &str) -> Result<Var> {
        let w = self.p(tape, &format!("{name}.weight"))?;
        let b = self.p(tape, &format!("{name}.bias"))?;
        let y = tape.matmul(x, w)?;
        tape.add_row_vec(y, b)
    }

    fn norm<T: Real>(&self, tape: &mut Tape<T>, x: Var, name: &str) -> Result<Var> {
        let g = self.p(tape, &format!("{name}.gamma"))?;
        let b = self.p(tape, &format!("{name}.beta"))?;
        tape.layer_norm(x, g, b, LN_EPS)
    }

    /// Like [`SegmentEncoder::encode_segment`], also returning each block's
    /// per-head attention probabilities.
    pub fn encode_segment_traced<T: Real>(
        &self,
        tape: &mut Tape<T>,
        ids: &[u32],
        pad_mask: &[bool],
        trace: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let n = cfg.seg_len;
        if ids.len() != n || pad_mask.len() != n {
            return Err(Error::Shape {
                op: "encode_segment",
                left: vec![n],
                right: vec![ids.len(), pad_mask.len()],
            });
        }
        let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..n).collect();

        let word_table = self.p(tape, "embeddings.word")?;
        let pos_table = self.p(tape, "embeddings.position")?;
        let type_table = self.p(tape, "embeddings.type")?;
        let words = tape.gather(word_table, &ids)?;
        let pos = tape.gather(pos_table, &positions)?;
        let types = tape.gather(type_table, &vec![0; n])?;
        let x = tape.add(words, pos)?;
        let x = tape.add(x, types)?;
        let mut x = self.norm(tape, x, "embeddings.ln")?;

        let dh = cfg.head_dim();
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut trace = trace;
        for b in 0..cfg.num_blocks {
            let q = self.linear(tape, x, &format!("block{b}.attn.q"))?;
            let k = self.linear(tape, x, &format!("block{b}.attn.k"))?;
            let v = self.linear(tape, x, &format!("block{b}.attn.v"))?;
            let mut heads = Vec::with_capacity(cfg.heads);
            for h in 0..cfg.heads {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                let qh = tape.slice_cols(q, lo, hi)?;
                let kh = tape.slice_cols(k, lo, hi)?;
                let vh = tape.slice_cols(v, lo, hi)?;
                let scores = tape.matmul_bt(qh, kh)?;
                let scores = tape.scale(scores, scale);
                let scores = tape.mask_cols(scores, pad_mask)?;
                let probs = tape.softmax_rows(scores);
                if let Some(t) = trace.as_deref_mut() {
                    t.push(probs);
                }
                heads.push(tape.matmul(probs, vh)?);
            }
            let ctx = tape.concat_cols(&heads)?;
            let attn = self.linear(tape, ctx, &format!("block{b}.attn.o"))?;
            let x1 = tape.add(x, attn)?;
            let x1 = self.norm(tape, x1, &format!("block{b}.attn_ln"))?;
            let hmid = self.linear(tape, x1, &format!("block{b}.ffn.in"))?;
            let hmid = tape.gelu(hmid);
            let hout = self.linear(tape, hmid, &format!("block{b}.ffn.out"))?;
            let x2 = tape.add(x1, hout)?;
            x = self.norm(tape, x2, &format!("block{b}.ffn_ln"))?;
        }
        Ok(x)
    }
}

impl SegmentEncoder for TransformerEncoder {
    fn seg_len(&self) -> usize {
        self.config.seg_len
    }

    fn hidden(&self) -> usize {
        self.config.hidden
    }

    fn encode_segment<T: Real>(&self, tape: &mut Tape<T>, ids: &[u32], pad_mask: &[bool]) -> Result<Var> {
        self.encode_segment_traced(tape, ids, pad_mask, None)
    }
}
