//! Long-document multi-label text classification: a segmented transformer
//! encoder with per-label attention pooling, trained from scratch on a
//! small reverse-mode autodiff engine.

pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod init;
pub mod label_attention;
pub mod long_context;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod synthetic;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
pub use model::{Architecture, Classifier, EncoderSpec, Model, ModelConfig};
pub use tensor::{Real, Tensor};
