//! Oracles for per-label attention pooling.

use super::{randn, rng, store};
use longdoc::autograd::Tape;
use longdoc::label_attention::{attention_weights, predict};
use longdoc::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Default)]
pub struct AttentionReport {
    pub max_sum_dev: f64,
    pub max_shift_dev: f64,
    pub max_perm_dev: f64,
    pub masked_mass: f64,
    pub wrong_widths: usize,
}

fn shifted(e: &Tensor<f64>, u: &[f64]) -> Tensor<f64> {
    let d = e.cols();
    let data = e.data().iter().enumerate().map(|(i, x)| x + u[i % d]).collect();
    Tensor::new(e.shape().to_vec(), data).unwrap()
}

fn permuted(e: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| e.row(i).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

/// (alpha K×s, probabilities K) for tokens `e` and head parameters.
fn run(e: &Tensor<f64>, q: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> (Tensor<f64>, Vec<f64>) {
    let params = store(vec![("q", q.clone()), ("w", w.clone()), ("b", b.clone())]);
    let mut t = Tape::inference(&params);
    let ev = t.constant(e.clone());
    let (qv, wv, bv) = (t.param("q").unwrap(), t.param("w").unwrap(), t.param("b").unwrap());
    let alpha = attention_weights(&mut t, ev, qv).unwrap();
    let probs = predict(&mut t, ev, qv, wv, bv).unwrap();
    (t.value(alpha).clone(), t.value(probs).data().to_vec())
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs the head on `trials` random inputs and records the worst deviation
/// for each invariant.
pub fn attention_invariants(trials: usize) -> AttentionReport {
    let mut r = rng(21);
    let mut rep = AttentionReport::default();
    for _ in 0..trials {
        let s = r.gen_range(1..60);
        let d = r.gen_range(1..16);
        let k = r.gen_range(1..8);
        let e = randn(&mut r, &[s, d], 1.0);
        let q = randn(&mut r, &[k, d], 1.0);
        let w = randn(&mut r, &[k, d], 1.0);
        let b = randn(&mut r, &[k], 1.0);
        let (alpha, probs) = run(&e, &q, &w, &b);
        if alpha.shape() != [k, s] {
            rep.wrong_widths += 1;
        }
        for c in 0..k {
            let sum: f64 = alpha.row(c).iter().sum();
            rep.max_sum_dev = rep.max_sum_dev.max((sum - 1.0).abs());
        }

        // Adding u to every token shifts class c's scores by <q_c, u>.
        let u: Vec<f64> = (0..d).map(|_| r.gen_range(-3.0..3.0)).collect();
        let (alpha_shift, _) = run(&shifted(&e, &u), &q, &w, &b);
        rep.max_shift_dev = rep.max_shift_dev.max(max_dev(alpha.data(), alpha_shift.data()));

        let mut perm: Vec<usize> = (0..s).collect();
        perm.shuffle(&mut r);
        let (_, probs_perm) = run(&permuted(&e, &perm), &q, &w, &b);
        rep.max_perm_dev = rep.max_perm_dev.max(max_dev(&probs, &probs_perm));
    }
    rep.masked_mass = padded_mass(trials);
    rep
}

/// Total attention probability that lands on padded key positions inside
/// the encoder, plus any label-attention column beyond the real tokens.
pub fn padded_mass(trials: usize) -> f64 {
    use super::structure::{fixture, VOCAB};
    let seg_len = 8;
    let fx = fixture(seg_len, 31);
    let mut r = rng(32);
    let mut mass = 0.0f64;
    for _ in 0..trials {
        let real = r.gen_range(1..=seg_len);
        let mut ids: Vec<u32> = (0..real).map(|_| r.gen_range(1..VOCAB)).collect();
        ids.resize(seg_len, 0);
        let mask: Vec<bool> = (0..seg_len).map(|i| i >= real).collect();
        let mut tape = Tape::inference(&fx.params);
        let mut trace = Vec::new();
        fx.enc.encode_segment_traced(&mut tape, &ids, &mask, Some(&mut trace)).unwrap();
        for v in trace {
            let a = tape.value(v);
            for i in 0..a.rows() {
                for (j, &p) in a.row(i).iter().enumerate() {
                    if mask[j] {
                        mass += p.abs() as f64;
                    }
                }
            }
        }
    }
    mass
}
