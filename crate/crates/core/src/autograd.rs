//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Tape`] borrows a [`ParamStore`] and records every forward operation as
//! a node. Parameter nodes reference the store without copying. Calling
//! [`Tape::backward`] on a scalar node walks the tape in reverse and returns
//! one gradient tensor per parameter.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{kernels, Real, Tensor};

/// Additive stand-in for −∞ used before a softmax. Underflows to exactly zero
/// after exponentiation in `f32` without producing NaN.
pub const MASK_VALUE: f64 = -1e9;

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the loss.
pub const BCE_CLAMP: f64 = 1e-7;

/// Named parameter tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T = f32> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let (index, _) = self.entries.insert_full(name, value);
        Ok(index)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    pub fn by_index(&self, index: usize) -> &Tensor<T> {
        &self.entries[index]
    }

    pub fn by_index_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.entries[index]
    }

    pub fn name_of(&self, index: usize) -> &str {
        self.entries.get_index(index).map(|(k, _)| k.as_str()).unwrap_or("")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalars across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

/// One gradient tensor per parameter, aligned with the store's order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T = f32> {
    grads: Vec<Tensor<T>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn zeros_like(params: &ParamStore<T>) -> Self {
        Self {
            grads: params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn from_tensors(grads: Vec<Tensor<T>>) -> Self {
        Self { grads }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, index: usize) -> &Tensor<T> {
        &self.grads[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.grads.iter()
    }

    pub fn accumulate(&mut self, other: &ParamGrads<T>) -> Result<()> {
        if self.grads.len() != other.grads.len() {
            return Err(Error::Shape {
                op: "accumulate",
                left: vec![self.grads.len()],
                right: vec![other.grads.len()],
            });
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            if a.shape() != b.shape() {
                return Err(Error::Shape {
                    op: "accumulate",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for g in &mut self.grads {
            for x in g.data_mut() {
                *x *= factor;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.grads
            .iter()
            .all(|g| g.data().iter().all(|x| *x == T::zero()))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Const,
    Param(usize),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRowVec(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    MaskCols {
        x: Var,
        mask: Vec<bool>,
    },
    Unfold {
        x: Var,
        width: usize,
    },
    RowDot(Var, Var),
    Sum(Var),
    Bce {
        p: Var,
        targets: Vec<T>,
        active: Vec<bool>,
    },
}

#[derive(Debug)]
enum Value<T> {
    Owned(Tensor<T>),
    Param(usize),
}

#[derive(Debug)]
struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward computation for later differentiation.
pub struct Tape<'p, T: Real = f32> {
    params: &'p ParamStore<T>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<T>>,
    track: bool,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn matrix_dims(op: &'static str, t: &[usize]) -> Result<(usize, usize)> {
    match *t {
        [m, n] => Ok((m, n)),
        _ => Err(Error::Shape {
            op,
            left: t.to_vec(),
            right: vec![],
        }),
    }
}

impl<'p, T: Real> Tape<'p, T> {
    /// A tape whose parameter nodes require gradients.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
            track: true,
        }
    }

    /// A tape for inference: nothing requires a gradient.
    pub fn inference(params: &'p ParamStore<T>) -> Self {
        Self {
            track: false,
            ..Self::new(params)
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(i) => self.params.by_index(*i),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite output from {op:?}");
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn param_at(&mut self, index: usize) -> Var {
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(index),
            op: Op::Param(index),
            needs_grad: self.track,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[index] = Some(v);
        v
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let index = self
            .params
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        Ok(self.param_at(index))
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul", self.shape(a))?;
        let (k2, n) = matrix_dims("matmul", self.shape(b))?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    /// `a[m×k] · b[n×k]ᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims("matmul_bt", self.shape(a))?;
        let (n, k2) = matrix_dims("matmul_bt", self.shape(b))?;
        if k != k2 {
            return Err(shape_err("matmul_bt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_bt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulBt(a, b), needs))
    }

    fn zip_same(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), needs))
    }

    /// Adds the vector `v[n]` to every row of `a[..×n]`.
    pub fn add_row_vec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (ta, tv) = (self.value(a), self.value(v));
        let n = ta.cols();
        if tv.numel() != n || tv.shape().len() != 1 {
            return Err(shape_err("add_row_vec", ta.shape(), tv.shape()));
        }
        let vd = tv.data();
        let data = ta
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(vd).map(|(&x, &y)| x + y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(v);
        Ok(self.push(out, Op::AddRowVec(a, v), needs))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let ta = self.value(a);
        let out = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| x * factor).collect())
            .expect("same shape");
        let needs = self.needs(a);
        self.push(out, Op::Scale(a, factor), needs)
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let ta = self.value(a);
        Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())
            .expect("same shape")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid);
        let needs = self.needs(a);
        self.push(out, Op::Sigmoid(a), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x.tanh());
        let needs = self.needs(a);
        self.push(out, Op::Tanh(a), needs)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| gelu_parts(x).0);
        let needs = self.needs(a);
        self.push(out, Op::Gelu(a), needs)
    }

    /// Softmax along the last axis, with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let n = ta.cols();
        let mut data = ta.data().to_vec();
        if n > 0 {
            for row in data.chunks_mut(n) {
                softmax_in_place(row);
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(out, Op::SoftmaxRows(a), needs)
    }

    /// Normalizes each row of `x[..×d]` to zero mean and unit variance, then
    /// applies `gamma[d]` and `beta[d]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.cols();
        if d == 0 {
            return Err(Error::Config("layer_norm over zero-width rows".into()));
        }
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.numel() != d || tb.numel() != d {
            return Err(shape_err("layer_norm", tx.shape(), tg.shape()));
        }
        let rows = tx.rows();
        let eps = T::of(eps);
        let inv_d = T::of(1.0 / d as f64);
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), out)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// Rows `ids` of `table[V×d]`, as an `len(ids)×d` matrix.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (v, d) = matrix_dims("gather", tt.shape())?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    what: "embedding",
                    index: id,
                    size: v,
                });
            }
            data.extend_from_slice(tt.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        let needs = self.needs(table);
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Empty("concat_rows".into()))?;
        let (_, n) = matrix_dims("concat_rows", self.shape(first))?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (m, n2) = matrix_dims("concat_rows", self.shape(p))?;
            if n2 != n {
                return Err(shape_err("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += m;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(vec![rows, n], data)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Empty("concat_cols".into()))?;
        let (m, _) = matrix_dims("concat_cols", self.shape(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (m2, n) = matrix_dims("concat_cols", self.shape(p))?;
            if m2 != m {
                return Err(shape_err("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(n);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![m, total], data)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Rows of `x` in the order given; rows may repeat.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = matrix_dims("select_rows", tx.shape())?;
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(Error::Index {
                    what: "row",
                    index: r,
                    size: m,
                });
            }
            data.extend_from_slice(tx.row(r));
        }
        let out = Tensor::new(vec![rows.len(), n], data)?;
        let needs = self.needs(x);
        Ok(self.push(
            out,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            needs,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let rows: Vec<usize> = (start..end).collect();
        self.select_rows(x, &rows)
    }

    /// Columns `start..end` of `x[m×n]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = matrix_dims("slice_cols", tx.shape())?;
        if start > end || end > n {
            return Err(Error::Index {
                what: "column",
                index: end,
                size: n,
            });
        }
        let data = (0..m).flat_map(|r| tx.row(r)[start..end].iter().copied()).collect();
        let out = Tensor::new(vec![m, end - start], data)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::SliceCols { x, start }, needs))
    }

    /// Overwrites column `j` of every row with [`MASK_VALUE`] where `mask[j]`.
    pub fn mask_cols(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.cols();
        if mask.len() != n {
            return Err(shape_err("mask_cols", tx.shape(), &[mask.len()]));
        }
        let fill = T::of(MASK_VALUE);
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, &m) in row.iter_mut().zip(mask) {
                if m {
                    *v = fill;
                }
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let needs = self.needs(x);
        Ok(self.push(
            out,
            Op::MaskCols {
                x,
                mask: mask.to_vec(),
            },
            needs,
        ))
    }

    /// Zero-padded sliding windows: row `i` of the `n×(width·c)` output holds
    /// rows `i - width/2 ..= i + width/2` of `x[n×c]` side by side.
    pub fn unfold(&mut self, x: Var, width: usize) -> Result<Var> {
        if width % 2 == 0 {
            return Err(Error::Config(format!("unfold width must be odd, got {width}")));
        }
        let tx = self.value(x);
        let (n, c) = matrix_dims("unfold", tx.shape())?;
        let half = width / 2;
        let mut data = vec![T::zero(); n * width * c];
        for i in 0..n {
            for j in 0..width {
                let src = i + j;
                if src < half || src - half >= n {
                    continue;
                }
                let dst = (i * width + j) * c;
                data[dst..dst + c].copy_from_slice(tx.row(src - half));
            }
        }
        let out = Tensor::new(vec![n, width * c], data)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::Unfold { x, width }, needs))
    }

    /// Per-row inner products of two `m×n` matrices, giving a length-`m` vector.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("row_dot", ta.shape(), tb.shape()));
        }
        let n = ta.cols();
        let data: Vec<T> = ta
            .data()
            .chunks(n)
            .zip(tb.data().chunks(n))
            .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| p * q).sum())
            .collect();
        let out = Tensor::vector(data);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::RowDot(a, b), needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    /// Summed binary cross-entropy between probabilities `p` and 0/1 targets.
    pub fn bce(&mut self, p: Var, targets: &[T]) -> Result<Var> {
        let tp = self.value(p);
        if tp.numel() != targets.len() {
            return Err(shape_err("bce", tp.shape(), &[targets.len()]));
        }
        let lo = T::of(BCE_CLAMP);
        let hi = T::one() - lo;
        let mut active = Vec::with_capacity(targets.len());
        let mut loss = T::zero();
        for (&pv, &y) in tp.data().iter().zip(targets) {
            let clamped = pv.max(lo).min(hi);
            active.push(clamped == pv);
            loss += -(y * clamped.ln() + (T::one() - y) * (T::one() - clamped).ln());
        }
        let needs = self.needs(p);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                targets: targets.to_vec(),
                active,
            },
            needs,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads<T>> {
        if self.value(loss).numel() != 1 {
            return Err(shape_err("backward", self.shape(loss), &[1]));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = ParamGrads::zeros_like(self.params);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(i, &node.op, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        i: usize,
        op: &Op<T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        out: &mut ParamGrads<T>,
    ) {
        let y = self.value(Var(i));
        match op {
            Op::Const => {}
            Op::Param(p) => {
                for (d, &s) in out.grads[*p].data_mut().iter_mut().zip(g) {
                    *d += s;
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if self.needs(*a) {
                    let ga = slot(grads, *a, m * k);
                    kernels::matmul_bt_acc(g, tb.data(), ga, m, n, k);
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, k * n);
                    kernels::matmul_at_acc(ta.data(), g, gb, m, k, n);
                }
            }
            Op::MatMulBt(a, b) => {
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[0];
                if self.needs(*a) {
                    let ga = slot(grads, *a, m * k);
                    kernels::matmul_acc(g, tb.data(), ga, m, n, k);
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, n * k);
                    kernels::matmul_at_acc(g, ta.data(), gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        add_into(slot(grads, v, g.len()), g);
                    }
                }
            }
            Op::AddRowVec(a, v) => {
                if self.needs(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if self.needs(*v) {
                    let n = self.value(*v).numel();
                    let gv = slot(grads, *v, n);
                    for row in g.chunks(n) {
                        add_into(gv, row);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let ga = slot(grads, *a, g.len());
                    for ((d, &s), &o) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *d += s * o;
                    }
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, g.len());
                    for ((d, &s), &o) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *d += s * o;
                    }
                }
            }
            Op::Scale(a, f) => {
                let ga = slot(grads, *a, g.len());
                for (d, &s) in ga.iter_mut().zip(g) {
                    *d += s * *f;
                }
            }
            Op::Sigmoid(a) => {
                let ga = slot(grads, *a, g.len());
                for ((d, &s), &o) in ga.iter_mut().zip(g).zip(y.data()) {
                    *d += s * o * (T::one() - o);
                }
            }
            Op::Tanh(a) => {
                let ga = slot(grads, *a, g.len());
                for ((d, &s), &o) in ga.iter_mut().zip(g).zip(y.data()) {
                    *d += s * (T::one() - o * o);
                }
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                let ga = slot(grads, *a, g.len());
                for ((d, &s), &xv) in ga.iter_mut().zip(g).zip(x) {
                    *d += s * gelu_parts(xv).1;
                }
            }
            Op::SoftmaxRows(a) => {
                let n = y.cols();
                let ga = slot(grads, *a, g.len());
                for ((drow, grow), yrow) in ga.chunks_mut(n).zip(g.chunks(n)).zip(y.data().chunks(n)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&s, &o)| s * o).sum();
                    for ((d, &s), &o) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d += o * (s - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = y.cols();
                let gam = self.value(*gamma).data();
                if self.needs(*gamma) {
                    let gg = slot(grads, *gamma, d);
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if self.needs(*beta) {
                    let gb = slot(grads, *beta, d);
                    for grow in g.chunks(d) {
                        add_into(gb, grow);
                    }
                }
                if self.needs(*x) {
                    let inv_d = T::of(1.0 / d as f64);
                    let gx = slot(grads, *x, g.len());
                    let mut dh = vec![T::zero(); d];
                    for (r, (grow, hrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        for j in 0..d {
                            dh[j] = grow[j] * gam[j];
                        }
                        let mean_dh = dh.iter().copied().sum::<T>() * inv_d;
                        let mean_dhh = dh.iter().zip(hrow).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
                        let drow = &mut gx[r * d..(r + 1) * d];
                        for j in 0..d {
                            drow[j] += rstd[r] * (dh[j] - mean_dh - hrow[j] * mean_dhh);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                let tt = self.value(*table);
                let d = tt.cols();
                let gt = slot(grads, *table, tt.numel());
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if self.needs(p) {
                        add_into(slot(grads, p, len), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = y.cols();
                let mut col = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let (m, n) = (tp.rows(), tp.cols());
                    if self.needs(p) {
                        let gp = slot(grads, p, m * n);
                        for r in 0..m {
                            add_into(&mut gp[r * n..(r + 1) * n], &g[r * total + col..r * total + col + n]);
                        }
                    }
                    col += n;
                }
            }
            Op::SelectRows { x, rows } => {
                let tx = self.value(*x);
                let n = tx.cols();
                let gx = slot(grads, *x, tx.numel());
                for (i, &r) in rows.iter().enumerate() {
                    add_into(&mut gx[r * n..(r + 1) * n], &g[i * n..(i + 1) * n]);
                }
            }
            Op::SliceCols { x, start } => {
                let tx = self.value(*x);
                let (m, n) = (tx.rows(), tx.cols());
                let w = y.cols();
                let gx = slot(grads, *x, m * n);
                for r in 0..m {
                    add_into(&mut gx[r * n + start..r * n + start + w], &g[r * w..(r + 1) * w]);
                }
            }
            Op::MaskCols { x, mask } => {
                let n = mask.len();
                let gx = slot(grads, *x, g.len());
                for (drow, grow) in gx.chunks_mut(n).zip(g.chunks(n)) {
                    for ((d, &s), &m) in drow.iter_mut().zip(grow).zip(mask) {
                        if !m {
                            *d += s;
                        }
                    }
                }
            }
            Op::Unfold { x, width } => {
                let tx = self.value(*x);
                let (n, c) = (tx.rows(), tx.cols());
                let half = width / 2;
                let gx = slot(grads, *x, n * c);
                for i in 0..n {
                    for j in 0..*width {
                        let src = i + j;
                        if src < half || src - half >= n {
                            continue;
                        }
                        let s = (i * width + j) * c;
                        let dst = (src - half) * c;
                        add_into(&mut gx[dst..dst + c], &g[s..s + c]);
                    }
                }
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let n = ta.cols();
                if self.needs(*a) {
                    let ga = slot(grads, *a, ta.numel());
                    for (r, &s) in g.iter().enumerate() {
                        for j in 0..n {
                            ga[r * n + j] += s * tb.data()[r * n + j];
                        }
                    }
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, tb.numel());
                    for (r, &s) in g.iter().enumerate() {
                        for j in 0..n {
                            gb[r * n + j] += s * ta.data()[r * n + j];
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let ga = slot(grads, *a, self.value(*a).numel());
                for d in ga.iter_mut() {
                    *d += g[0];
                }
            }
            Op::Bce { p, targets, active } => {
                let tp = self.value(*p).data();
                let gp = slot(grads, *p, tp.len());
                for ((d, (&pv, &yv)), &on) in gp.iter_mut().zip(tp.iter().zip(targets)).zip(active) {
                    if on {
                        *d += g[0] * (pv - yv) / (pv * (T::one() - pv));
                    }
                }
            }
        }
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// GELU value and derivative (tanh approximation).
fn gelu_parts<T: Real>(x: T) -> (T, T) {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let half = T::of(0.5);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let value = half * x * (T::one() + t);
    let du = c * (T::one() + T::of(3.0) * a * x * x);
    let deriv = half * (T::one() + t) + half * x * (T::one() - t * t) * du;
    (value, deriv)
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(entries: &[(&str, Tensor<f64>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (n, t) in entries {
            s.insert(*n, t.clone()).unwrap();
        }
        s
    }

    #[test]
    fn identity_matmul_is_noop() {
        let x = Tensor::from_rows(&[vec![1.5, -2.0], vec![0.25, 4.0]]).unwrap();
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let params = store(&[("i", eye), ("x", x.clone())]);
        let mut tape = Tape::new(&params);
        let (i, xv) = (tape.param("i").unwrap(), tape.param("x").unwrap());
        let y = tape.matmul(i, xv).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn matmul_analytic_case() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let params = store(&[("a", a), ("b", b)]);
        let mut tape = Tape::new(&params);
        let (a, b) = (tape.param("a").unwrap(), tape.param("b").unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let params = store(&[
            ("a", Tensor::zeros(&[2, 3])),
            ("b", Tensor::zeros(&[2, 3])),
        ]);
        let mut tape = Tape::new(&params);
        let (a, b) = (tape.param("a").unwrap(), tape.param("b").unwrap());
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let params = ParamStore::<f64>::new();
        let mut tape = Tape::new(&params);
        let x = tape.constant(Tensor::vector(vec![0.7; 5]));
        let y = tape.softmax_rows(x);
        for &v in tape.value(y).data() {
            assert!((v - 0.2).abs() < 1e-12);
        }
        let x = tape.constant(Tensor::vector(vec![0.0, 2f64.ln()]));
        let y = tape.softmax_rows(x);
        let d = tape.value(y).data();
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((d[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_gives_exact_zero_in_f32() {
        let params = ParamStore::<f32>::new();
        let mut tape = Tape::new(&params);
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let m = tape.mask_cols(x, &[false, true, false]).unwrap();
        let y = tape.softmax_rows(m);
        let d = tape.value(y).data();
        assert_eq!(d[1], 0.0);
        assert!((d[0] + d[2] - 1.0).abs() < 1e-6);

        let all = tape.mask_cols(x, &[true, true, true]).unwrap();
        let y = tape.softmax_rows(all);
        assert!(tape.value(y).is_finite());
    }

    #[test]
    fn layer_norm_examples() {
        let params = ParamStore::<f64>::new();
        let mut tape = Tape::new(&params);
        let gamma = tape.constant(Tensor::vector(vec![1.0; 2]));
        let beta = tape.constant(Tensor::vector(vec![0.0; 2]));
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 3.0], vec![5.0, 5.0]]).unwrap());
        let y = tape.layer_norm(x, gamma, beta, 1e-12).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] + 1.0).abs() < 1e-9);
        assert!((d[1] - 1.0).abs() < 1e-9);
        assert_eq!(&d[2..], &[0.0, 0.0]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(sigmoid(0.0f32), 0.5);
        assert!(sigmoid(-100.0f32) >= 0.0);
        assert!(sigmoid(100.0f32) <= 1.0);
    }

    #[test]
    fn gather_duplicates_and_sums_gradients() {
        let table = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let params = store(&[("t", table)]);
        let mut tape = Tape::new(&params);
        let t = tape.param("t").unwrap();
        let g = tape.gather(t, &[0, 0]).unwrap();
        assert_eq!(tape.value(g).data(), &[1.0, 2.0, 1.0, 2.0]);
        let s = tape.sum(g);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(0).data(), &[2.0, 2.0, 0.0, 0.0]);
        assert!(tape.gather(t, &[2]).is_err());
    }

    #[test]
    fn unfold_pads_with_zeros() {
        let params = ParamStore::<f64>::new();
        let mut tape = Tape::new(&params);
        let x = tape.constant(Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap());
        let u = tape.unfold(x, 3).unwrap();
        assert_eq!(
            tape.value(u).data(),
            &[0.0, 1.0, 2.0, 1.0, 2.0, 3.0, 2.0, 3.0, 0.0]
        );
        assert!(tape.unfold(x, 2).is_err());
    }

    #[test]
    fn bce_values() {
        let params = ParamStore::<f64>::new();
        let mut tape = Tape::new(&params);
        let p = tape.constant(Tensor::vector(vec![0.5]));
        let l = tape.bce(p, &[1.0]).unwrap();
        assert!((tape.value(l).data()[0] - 2f64.ln()).abs() < 1e-12);

        let p = tape.constant(Tensor::vector(vec![0.9, 0.1, 0.2]));
        let l = tape.bce(p, &[1.0, 0.0, 0.0]).unwrap();
        let expected = -(0.9f64.ln()) - 0.9f64.ln() - 0.8f64.ln();
        assert!((tape.value(l).data()[0] - expected).abs() < 1e-12);
        assert!((expected - 0.4339).abs() < 1e-4);

        let p = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        let l = tape.bce(p, &[1.0, 0.0]).unwrap();
        assert!(tape.value(l).data()[0] < 1e-6);
    }

    #[test]
    fn inference_tape_needs_no_gradients() {
        let params = store(&[("w", Tensor::vector(vec![1.0, 2.0]))]);
        let mut tape = Tape::inference(&params);
        let w = tape.param("w").unwrap();
        let s = tape.sum(w);
        assert!(tape.backward(s).unwrap().is_zero());
    }

    #[test]
    fn param_lookup_is_cached() {
        let params = store(&[("w", Tensor::vector(vec![1.0]))]);
        let mut tape = Tape::new(&params);
        let a = tape.param("w").unwrap();
        let b = tape.param("w").unwrap();
        assert_eq!(a, b);
        assert!(tape.param("missing").is_err());
    }
}
