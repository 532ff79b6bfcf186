//! Adam with bias correction.

use crate::autograd::{ParamGrads, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamState {
    pub fn new(params: &ParamStore<f32>, lr: f32) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &ParamStore<f32>, lr: f32, beta1: f32, beta2: f32, eps: f32) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
        }
    }
}

/// Applies one Adam update in place and increments `state.t`.
pub fn adam_step(params: &mut ParamStore<f32>, grads: &ParamGrads<f32>, state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape {
            op: "adam_step",
            left: vec![params.len()],
            right: vec![grads.len(), state.m.len()],
        });
    }
    for i in 0..params.len() {
        let (p, g) = (params.by_index(i), grads.get(i));
        if p.shape() != g.shape() || state.m[i].len() != p.numel() || state.v[i].len() != p.numel() {
            return Err(Error::Shape {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - (b1 as f64).powi(t);
    let bc2 = 1.0 - (b2 as f64).powi(t);
    let step = (state.lr as f64 / bc1) as f32;
    let bc2_sqrt = bc2.sqrt() as f32;

    for i in 0..params.len() {
        let g = grads.get(i).data();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let p = params.by_index_mut(i).data_mut();
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            p[j] -= step * m[j] / (v[j].sqrt() / bc2_sqrt + state.eps);
        }
    }
    Ok(())
}
