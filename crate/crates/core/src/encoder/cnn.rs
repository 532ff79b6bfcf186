//! Convolutional baseline encoder: word embeddings followed by one
//! same-padded 1-D convolution and `tanh`.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::init::{Init, ParamSpec};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub embed_dim: usize,
    /// Number of filters; also the width of each token representation.
    pub filters: usize,
    /// Odd kernel width.
    pub kernel: usize,
    pub max_words: usize,
    pub vocab_size: usize,
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("cnn_kernel must be odd, got {}", self.kernel)));
        }
        if self.embed_dim == 0 || self.filters == 0 || self.vocab_size == 0 || self.max_words == 0 {
            return Err(Error::Config("cnn dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::new("embed", &[self.vocab_size, self.embed_dim], Init::TruncatedNormal),
            ParamSpec::new(
                "conv.weight",
                &[self.kernel * self.embed_dim, self.filters],
                Init::XavierUniform,
            ),
            ParamSpec::new("conv.bias", &[self.filters], Init::Zeros),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnEncoder {
    pub config: CnnConfig,
    prefix: String,
}

impl CnnEncoder {
    pub fn new(config: CnnConfig, prefix: impl Into<String>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            prefix: prefix.into(),
        })
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = self.config.param_specs();
        for s in &mut specs {
            s.name = format!("{}{}", self.prefix, s.name);
        }
        specs
    }

    pub fn hidden(&self) -> usize {
        self.config.filters
    }

    /// `n×filters` token representations for `n ≥ 1` word ids.
    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, word_ids: &[u32]) -> Result<Var> {
        if word_ids.is_empty() {
            return Err(Error::Empty("cnn encoder needs at least one word".into()));
        }
        let ids: Vec<usize> = word_ids.iter().map(|&i| i as usize).collect();
        let table = tape.param(&format!("{}embed", self.prefix))?;
        let w = tape.param(&format!("{}conv.weight", self.prefix))?;
        let b = tape.param(&format!("{}conv.bias", self.prefix))?;
        let x = tape.gather(table, &ids)?;
        let windows = tape.unfold(x, self.config.kernel)?;
        let h = tape.matmul(windows, w)?;
        let h = tape.add_row_vec(h, b)?;
        Ok(tape.tanh(h))
    }
}
