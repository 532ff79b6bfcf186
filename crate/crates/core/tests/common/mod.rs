#![allow(dead_code)]

pub mod attention;
pub mod metric_oracles;
pub mod runs;
pub mod structure;

use longdoc::autograd::{ParamStore, Tape, Var};
use longdoc::encoder::EncoderConfig;
use longdoc::model::{Architecture, EncoderSpec, ModelConfig};
use longdoc::{Result, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const FD_STEP: f64 = 1e-4;
/// Below this gradient norm the error is reported in absolute terms; a
/// gradient that is identically zero (e.g. the attention key bias) leaves
/// only rounding noise in both estimates.
pub const NORM_FLOOR: f64 = 1e-7;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).unwrap();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).unwrap()
}

pub fn store(entries: Vec<(&str, Tensor<f64>)>) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (name, t) in entries {
        s.insert(name, t).unwrap();
    }
    s
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `||a - b|| / max(||a||, ||b||)` over a whole tensor; 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < NORM_FLOOR {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn eval_loss<F>(params: &ParamStore<f64>, f: &F) -> f64
where
    F: Fn(&mut Tape<f64>) -> Result<Var>,
{
    let mut tape = Tape::new(params);
    let loss = f(&mut tape).unwrap();
    tape.value(loss).data()[0]
}

/// Relative error between backprop and central differences, per parameter.
pub fn grad_check<F>(params: &ParamStore<f64>, f: F) -> Vec<(String, f64)>
where
    F: Fn(&mut Tape<f64>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = f(&mut tape).unwrap();
        tape.backward(loss).unwrap()
    };
    let mut out = Vec::new();
    let mut shifted = params.clone();
    for i in 0..params.len() {
        let n = params.by_index(i).numel();
        let mut numeric = vec![0.0; n];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let x = params.by_index(i).data()[j];
            shifted.by_index_mut(i).data_mut()[j] = x + FD_STEP;
            let plus = eval_loss(&shifted, &f);
            shifted.by_index_mut(i).data_mut()[j] = x - FD_STEP;
            let minus = eval_loss(&shifted, &f);
            shifted.by_index_mut(i).data_mut()[j] = x;
            *slot = (plus - minus) / (2.0 * FD_STEP);
        }
        out.push((params.name_of(i).to_string(), rel_err(analytic.get(i).data(), &numeric)));
    }
    out
}

pub fn worst(errs: &[(String, f64)]) -> (String, f64) {
    errs.iter()
        .cloned()
        .fold((String::new(), 0.0), |acc, e| if e.1 > acc.1 { e } else { acc })
}

/// Scalar `sum(v ⊙ R)` with a fixed random `R`, so every output entry
/// reaches the loss with a distinct weight.
pub fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let r = randn(&mut rng(seed), &shape, 1.0);
    let c = tape.constant(r);
    let m = tape.mul(v, c)?;
    Ok(tape.sum(m))
}

pub fn tiny_encoder(vocab: usize, seg_len: usize) -> EncoderConfig {
    EncoderConfig {
        num_blocks: 1,
        hidden: 8,
        heads: 2,
        intermediate: 16,
        vocab_size: vocab,
        max_positions: seg_len,
        type_vocab: 2,
        seg_len,
        include_pooler: false,
    }
}

pub fn tiny_model_config(k: usize, seg_len: usize, max_seq_len: usize, stride: usize) -> ModelConfig {
    ModelConfig {
        num_labels: k,
        seg_stride: stride,
        max_seq_len,
        encoder: EncoderSpec::Transformer(tiny_encoder(20, seg_len)),
    }
}

/// Parameters for `arch` with entries redrawn from N(0, std) so gradients
/// are not dominated by the near-zero initialization.
pub fn spread_params(arch: &Architecture, seed: u64, std: f64) -> ParamStore<f64> {
    let base = arch.init_params(seed).unwrap().cast::<f64>();
    let mut r = rng(seed ^ 0x5eed);
    let mut out = ParamStore::new();
    for (name, t) in base.iter() {
        let mut fresh = randn(&mut r, t.shape(), std);
        if name.ends_with("gamma") {
            fresh.data_mut().iter_mut().for_each(|x| *x += 1.0);
        }
        out.insert(name, fresh).unwrap();
    }
    out
}

pub fn random_ids(r: &mut ChaCha8Rng, n: usize, vocab: u32) -> Vec<u32> {
    (0..n).map(|_| r.gen_range(1..vocab)).collect()
}

/// Worst relative gradient error for every differentiable tape op.
pub fn op_gradient_errors() -> Vec<(&'static str, f64)> {
    use longdoc::autograd::MASK_VALUE;
    let mut r = rng(11);
    let a = randn(&mut r, &[3, 4], 1.0);
    let b = randn(&mut r, &[4, 5], 1.0);
    let c = randn(&mut r, &[3, 4], 1.0);
    let bt = randn(&mut r, &[5, 4], 1.0);
    let v4 = randn(&mut r, &[4], 1.0);
    let v4b = randn(&mut r, &[4], 1.0);
    let table = randn(&mut r, &[6, 4], 1.0);
    let _ = MASK_VALUE;

    let two = |x: &Tensor<f64>, y: &Tensor<f64>| store(vec![("x", x.clone()), ("y", y.clone())]);
    let one = |x: &Tensor<f64>| store(vec![("x", x.clone())]);
    let mut out: Vec<(&'static str, f64)> = Vec::new();
    let mut check = |name: &'static str, p: ParamStore<f64>, f: &dyn Fn(&mut Tape<f64>) -> Result<Var>| {
        out.push((name, worst(&grad_check(&p, f)).1));
    };

    check("matmul", two(&a, &b), &|t| {
        let (x, y) = (t.param("x")?, t.param("y")?);
        let m = t.matmul(x, y)?;
        project(t, m, 1)
    });
    check("matmul_bt", two(&a, &bt), &|t| {
        let (x, y) = (t.param("x")?, t.param("y")?);
        let m = t.matmul_bt(x, y)?;
        project(t, m, 2)
    });
    check("add", two(&a, &c), &|t| {
        let (x, y) = (t.param("x")?, t.param("y")?);
        let m = t.add(x, y)?;
        project(t, m, 3)
    });
    check("mul", two(&a, &c), &|t| {
        let (x, y) = (t.param("x")?, t.param("y")?);
        let m = t.mul(x, y)?;
        project(t, m, 4)
    });
    check("add_row_vec", two(&a, &v4), &|t| {
        let (x, y) = (t.param("x")?, t.param("y")?);
        let m = t.add_row_vec(x, y)?;
        project(t, m, 5)
    });
    check("scale", one(&a), &|t| {
        let x = t.param("x")?;
        let m = t.scale(x, -1.7);
        project(t, m, 6)
    });
    check("sigmoid", one(&a), &|t| {
        let x = t.param("x")?;
        let m = t.sigmoid(x);
        project(t, m, 7)
    });
    check("tanh", one(&a), &|t| {
        let x = t.param("x")?;
        let m = t.tanh(x);
        project(t, m, 8)
    });
    check("gelu", one(&a), &|t| {
        let x = t.param("x")?;
        let m = t.gelu(x);
        project(t, m, 9)
    });
    check("softmax_rows", one(&a), &|t| {
        let x = t.param("x")?;
        let m = t.softmax_rows(x);
        project(t, m, 10)
    });
    check(
        "layer_norm",
        store(vec![("x", a.clone()), ("g", v4.clone()), ("b", v4b.clone())]),
        &|t| {
            let (x, g, b) = (t.param("x")?, t.param("g")?, t.param("b")?);
            let m = t.layer_norm(x, g, b, 1e-12)?;
            project(t, m, 11)
        },
    );
    check("gather", one(&table), &|t| {
        let x = t.param("x")?;
        let m = t.gather(x, &[5, 0, 5, 2])?;
        project(t, m, 12)
    });
    check("concat_rows", two(&a, &c), &|t| {
        let (x, y) = (t.param("x")?, t.param("y")?);
        let m = t.concat_rows(&[x, y, x])?;
        project(t, m, 13)
    });
    check("concat_cols", two(&a, &c), &|t| {
        let (x, y) = (t.param("x")?, t.param("y")?);
        let m = t.concat_cols(&[y, x])?;
        project(t, m, 14)
    });
    check("select_rows", one(&a), &|t| {
        let x = t.param("x")?;
        let m = t.select_rows(x, &[2, 0, 2])?;
        project(t, m, 15)
    });
    check("slice_rows", one(&a), &|t| {
        let x = t.param("x")?;
        let m = t.slice_rows(x, 1, 3)?;
        project(t, m, 16)
    });
    check("slice_cols", one(&a), &|t| {
        let x = t.param("x")?;
        let m = t.slice_cols(x, 1, 3)?;
        project(t, m, 17)
    });
    check("mask_cols+softmax", one(&a), &|t| {
        let x = t.param("x")?;
        let m = t.mask_cols(x, &[false, true, false, true])?;
        let s = t.softmax_rows(m);
        project(t, s, 18)
    });
    check("unfold", one(&a), &|t| {
        let x = t.param("x")?;
        let m = t.unfold(x, 3)?;
        project(t, m, 19)
    });
    check("row_dot", two(&a, &c), &|t| {
        let (x, y) = (t.param("x")?, t.param("y")?);
        let m = t.row_dot(x, y)?;
        project(t, m, 20)
    });
    check("sum", one(&a), &|t| {
        let x = t.param("x")?;
        Ok(t.sum(x))
    });
    check("bce", one(&v4), &|t| {
        let x = t.param("x")?;
        let p = t.sigmoid(x);
        t.bce(p, &[1.0, 0.0, 0.0, 1.0])
    });
    out
}

/// Worst per-parameter relative error for the full transformer classifier
/// (one block, width 8, two heads, windows of 4, three labels, ten tokens).
pub fn composed_gradient_error() -> (String, f64) {
    let arch = Architecture::new(tiny_model_config(3, 4, 10, 0)).unwrap();
    let params = spread_params(&arch, 3, 0.5);
    let ids = random_ids(&mut rng(4), 10, 20);
    let labels = longdoc::corpus::SparseLabels::new(vec![0, 2]);
    worst(&grad_check(&params, |t| Ok(arch.loss(t, &ids, &labels)?.1)))
}

/// Same check for the convolutional encoder behind the same head.
pub fn cnn_gradient_error() -> (String, f64) {
    let cfg = ModelConfig {
        num_labels: 3,
        seg_stride: 0,
        max_seq_len: 10,
        encoder: EncoderSpec::Cnn(longdoc::encoder::CnnConfig {
            embed_dim: 5,
            filters: 6,
            kernel: 3,
            max_words: 10,
            vocab_size: 20,
        }),
    };
    let arch = Architecture::new(cfg).unwrap();
    let params = spread_params(&arch, 5, 0.5);
    let ids = random_ids(&mut rng(6), 10, 20);
    let labels = longdoc::corpus::SparseLabels::new(vec![1]);
    worst(&grad_check(&params, |t| Ok(arch.loss(t, &ids, &labels)?.1)))
}
