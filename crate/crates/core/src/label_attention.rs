//! Per-label attention pooling and per-label logistic classifiers.
//!
//! For token vectors `E[s×d]` and label `c` with attention vector `q_c`,
//! weights are `softmax_i(⟨e_i, q_c⟩)`, the pooled vector is
//! `z_c = Σ_i α_ci e_i`, and the probability is `σ(⟨z_c, w_c⟩ + b_c)`.
//! All labels are handled at once: scores are `Q·Eᵀ` (`K×s`), softmaxed
//! per row.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::init::{Init, ParamSpec};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelHead {
    pub num_labels: usize,
    pub hidden: usize,
    prefix: String,
}

/// Scalars in the attention vectors: `d·K`.
pub fn attention_param_count(hidden: usize, num_labels: usize) -> u64 {
    hidden as u64 * num_labels as u64
}

/// Scalars in the classifiers, weights plus offset: `(d+1)·K`.
pub fn classifier_param_count(hidden: usize, num_labels: usize) -> u64 {
    (hidden as u64 + 1) * num_labels as u64
}

impl LabelHead {
    pub fn new(num_labels: usize, hidden: usize, prefix: impl Into<String>) -> Result<Self> {
        if num_labels == 0 {
            return Err(Error::Config("label head needs at least one label".into()));
        }
        Ok(Self {
            num_labels,
            hidden,
            prefix: prefix.into(),
        })
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (k, d) = (self.num_labels, self.hidden);
        vec![
            ParamSpec::new(format!("{}q", self.prefix), &[k, d], Init::TruncatedNormal),
            ParamSpec::new(format!("{}w", self.prefix), &[k, d], Init::TruncatedNormal),
            ParamSpec::new(format!("{}b", self.prefix), &[k], Init::Zeros),
        ]
    }

    pub fn q<T: Real>(&self, tape: &mut Tape<T>) -> Result<Var> {
        tape.param(&format!("{}q", self.prefix))
    }

    /// Label probabilities, length `K`.
    pub fn predict<T: Real>(&self, tape: &mut Tape<T>, e: Var) -> Result<Var> {
        let q = self.q(tape)?;
        let w = tape.param(&format!("{}w", self.prefix))?;
        let b = tape.param(&format!("{}b", self.prefix))?;
        predict(tape, e, q, w, b)
    }
}

/// `K×s` attention weights of queries `q[K×d]` over tokens `e[s×d]`.
pub fn attention_weights<T: Real>(tape: &mut Tape<T>, e: Var, q: Var) -> Result<Var> {
    if tape.shape(e).first().copied().unwrap_or(0) == 0 {
        return Err(Error::Empty("document has no tokens".into()));
    }
    let scores = tape.matmul_bt(q, e)?;
    Ok(tape.softmax_rows(scores))
}

/// `K×d` attention-pooled document vectors.
pub fn pool_document<T: Real>(tape: &mut Tape<T>, e: Var, q: Var) -> Result<Var> {
    let alpha = attention_weights(tape, e, q)?;
    tape.matmul(alpha, e)
}

pub fn predict<T: Real>(tape: &mut Tape<T>, e: Var, q: Var, w: Var, b: Var) -> Result<Var> {
    let z = pool_document(tape, e, q)?;
    let logits = tape.row_dot(z, w)?;
    let logits = tape.add(logits, b)?;
    Ok(tape.sigmoid(logits))
}
