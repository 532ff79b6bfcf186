//! Parameter initialization.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autograd::ParamStore;
use crate::error::Result;
use crate::tensor::Tensor;

pub const INIT_STDDEV: f32 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Normal with stddev [`INIT_STDDEV`], redrawn beyond two stddevs.
    TruncatedNormal,
    Zeros,
    Ones,
    /// Uniform on ±sqrt(6 / (fan_in + fan_out)) for a `[fan_in, fan_out]` matrix.
    XavierUniform,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn truncated_normal<R: Rng>(rng: &mut R, n: usize, std: f32) -> Vec<f32> {
    (0..n)
        .map(|_| loop {
            let z: f32 = rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect()
}

/// Allocates and initializes every spec in order.
pub fn allocate<R: Rng>(specs: &[ParamSpec], rng: &mut R, store: &mut ParamStore<f32>) -> Result<()> {
    for spec in specs {
        let n = spec.numel();
        let data = match spec.init {
            Init::TruncatedNormal => truncated_normal(rng, n, INIT_STDDEV),
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::XavierUniform => {
                let fans: usize = spec.shape.iter().sum();
                let bound = (6.0 / fans.max(1) as f32).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
            }
        };
        store.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), data)?)?;
    }
    Ok(())
}
