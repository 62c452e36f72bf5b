//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape index order is a
//! topological order and `backward` is a single reverse sweep.

use rand::Rng;

use super::tensor::{broadcast_offsets, broadcast_shape, matmul_raw, split_axis, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    LayerNorm { x: Var, axis: usize, inv_std: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    MeanPool { x: Var, axis: usize },
    MaxPool { x: Var, argmax: Vec<usize> },
    Sum(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Transpose(Var),
    Embedding { table: Var, indices: Vec<usize> },
    CausalMask(Var),
    Pick { x: Var, cols: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` for nodes that do not lead to a
/// parameter.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MatMul(a, b), needs))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            return Tensor::new(ta.shape().to_vec(), data);
        }
        let shape = broadcast_shape(name, ta.shape(), tb.shape())?;
        let oa = broadcast_offsets(&shape, ta.shape());
        let ob = broadcast_offsets(&shape, tb.shape());
        let data = oa
            .iter()
            .zip(&ob)
            .map(|(&i, &j)| f(ta.data()[i], tb.data()[j]))
            .collect();
        Tensor::new(shape, data)
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let t = self.value(x).map(|v| v * k);
        let needs = self.needs(&[x]);
        self.push(t, Op::Scale(x, k), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        let needs = self.needs(&[x]);
        self.push(t, Op::Sigmoid(x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        let needs = self.needs(&[x]);
        self.push(t, Op::Tanh(x), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        let needs = self.needs(&[x]);
        self.push(t, Op::Relu(x), needs)
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(shape_err(op, self.shape(x), &[axis]));
        }
        Ok(())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let t = self.value(x);
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut out = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * n * inner + k * inner + i;
                let max = (0..n).fold(f64::NEG_INFINITY, |m, k| m.max(out[at(k)]));
                let mut sum = 0.0;
                for k in 0..n {
                    let e = (out[at(k)] - max).exp();
                    out[at(k)] = e;
                    sum += e;
                }
                for k in 0..n {
                    out[at(k)] /= sum;
                }
            }
        }
        let t = Tensor::new(t.shape().to_vec(), out)?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::Softmax { x, axis }, needs))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("log_softmax", x, axis)?;
        let t = self.value(x);
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut out = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * n * inner + k * inner + i;
                let max = (0..n).fold(f64::NEG_INFINITY, |m, k| m.max(out[at(k)]));
                let lse = max + (0..n).map(|k| (out[at(k)] - max).exp()).sum::<f64>().ln();
                for k in 0..n {
                    out[at(k)] -= lse;
                }
            }
        }
        let t = Tensor::new(t.shape().to_vec(), out)?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::LogSoftmax { x, axis }, needs))
    }

    /// Normalizes to zero mean and unit variance along `axis` (no affine).
    pub fn layer_norm(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("layer_norm", x, axis)?;
        let t = self.value(x);
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut out = t.data().to_vec();
        let mut inv_std = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * n * inner + k * inner + i;
                let mean = (0..n).map(|k| out[at(k)]).sum::<f64>() / n as f64;
                let var = (0..n).map(|k| (out[at(k)] - mean).powi(2)).sum::<f64>() / n as f64;
                let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                for k in 0..n {
                    out[at(k)] = (out[at(k)] - mean) * s;
                }
                inv_std.push(s);
            }
        }
        let t = Tensor::new(t.shape().to_vec(), out)?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::LayerNorm { x, axis, inv_std }, needs))
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// scales survivors by `1 / (1 - rate)`. Rate 0 returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let t = self.value(x);
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(t.shape().to_vec(), data)?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::Dropout { x, mask }, needs))
    }

    fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
        let mut s = shape.to_vec();
        s.remove(axis);
        s
    }

    /// Mean over `axis`; the axis is removed.
    pub fn mean_pool(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("mean_pool", x, axis)?;
        let t = self.value(x);
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += t.data()[o * n * inner + k * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        let t = Tensor::new(Self::reduced_shape(t.shape(), axis), out)?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::MeanPool { x, axis }, needs))
    }

    /// Max over `axis`; the axis is removed. Gradient flows to the first
    /// maximal element.
    pub fn max_pool(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("max_pool", x, axis)?;
        let t = self.value(x);
        let (outer, n, inner) = split_axis(t.shape(), axis);
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    let src = o * n * inner + k * inner + i;
                    let v = t.data()[src];
                    if k == 0 || v > out[o * inner + i] {
                        out[o * inner + i] = v;
                        argmax[o * inner + i] = src;
                    }
                }
            }
        }
        let t = Tensor::new(Self::reduced_shape(t.shape(), axis), out)?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::MaxPool { x, argmax }, needs))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", &base, &[axis]));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let same_rest = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !same_rest {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let len = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let needs = self.needs(parts);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            needs,
        ))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check_axis("slice", x, axis)?;
        let t = self.value(x);
        let (outer, n, inner) = split_axis(t.shape(), axis);
        if start + len > n {
            return Err(shape_err("slice", t.shape(), &[start, len]));
        }
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = o * n * inner + start * inner;
            data.extend_from_slice(&t.data()[from..from + len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Slice { x, axis, start }, needs))
    }

    /// Index `i` along the first axis, dropping that axis.
    pub fn select(&mut self, x: Var, i: usize) -> Result<Var> {
        let s = self.slice(x, 0, i, 1)?;
        let shape = self.shape(s)[1..].to_vec();
        self.reshape(s, &shape)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// Matrix transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(shape_err("transpose", t.shape(), &[2]));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = t.data()[i * c + j];
            }
        }
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::new(vec![c, r], data)?, Op::Transpose(x), needs))
    }

    /// Rows of `table` (V x d) at `indices`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(shape_err("embedding", t.shape(), &[2]));
        }
        let (v, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= v {
                return Err(Error::Vocabulary {
                    kind: "embedding",
                    index: i,
                    size: v,
                });
            }
            data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        let needs = self.needs(&[table]);
        Ok(self.push(
            Tensor::new(vec![indices.len(), d], data)?,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            needs,
        ))
    }

    /// Sets entries above the diagonal of the trailing square matrix to -inf.
    pub fn causal_mask_fill(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let r = t.rank();
        if r < 2 || t.shape()[r - 1] != t.shape()[r - 2] {
            return Err(shape_err("causal_mask_fill", t.shape(), &[]));
        }
        let n = t.shape()[r - 1];
        let mut data = t.data().to_vec();
        for (k, v) in data.iter_mut().enumerate() {
            let (i, j) = ((k / n) % n, k % n);
            if j > i {
                *v = f64::NEG_INFINITY;
            }
        }
        let t = Tensor::new(t.shape().to_vec(), data)?;
        let needs = self.needs(&[x]);
        Ok(self.push(t, Op::CausalMask(x), needs))
    }

    /// For a matrix, picks column `cols[r]` from every row `r`; result is
    /// `rows x 1`.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || t.shape()[0] != cols.len() {
            return Err(shape_err("pick", t.shape(), &[cols.len()]));
        }
        let c = t.shape()[1];
        let mut data = Vec::with_capacity(cols.len());
        for (r, &j) in cols.iter().enumerate() {
            if j >= c {
                return Err(Error::Vocabulary {
                    kind: "class",
                    index: j,
                    size: c,
                });
            }
            data.push(t.data()[r * c + j]);
        }
        let needs = self.needs(&[x]);
        Ok(self.push(
            Tensor::new(vec![cols.len(), 1], data)?,
            Op::Pick {
                x,
                cols: cols.to_vec(),
            },
            needs,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", self.shape(loss), &[]));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    /// Sums `g` (shaped like the broadcast output) down to `v`'s shape, with
    /// each element weighted by `w` if given.
    fn unbroadcast(&self, v: Var, g: &Tensor, w: Option<Var>) -> Tensor {
        let target = self.shape(v);
        let weights = w.map(|w| (self.value(w), broadcast_offsets(g.shape(), self.shape(w))));
        if target == g.shape() {
            let data = match &weights {
                None => g.data().to_vec(),
                Some((wt, off)) => g
                    .data()
                    .iter()
                    .zip(off)
                    .map(|(gv, &o)| gv * wt.data()[o])
                    .collect(),
            };
            return Tensor::new(target.to_vec(), data).expect("same shape");
        }
        let offsets = broadcast_offsets(g.shape(), target);
        let mut out = Tensor::zeros(target);
        let od = out.data_mut();
        for (k, (&o, gv)) in offsets.iter().zip(g.data()).enumerate() {
            let scale = match &weights {
                None => 1.0,
                Some((wt, off)) => wt.data()[off[k]],
            };
            od[o] += gv * scale;
        }
        out
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.nodes[a.0].needs_grad {
                    // dA = G * B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &tb.data()[p * n..(p + 1) * n];
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], da)?);
                }
                if self.nodes[b.0].needs_grad {
                    // dB = A^T * G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ta.data()[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (o, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::Add(a, b) => {
                if self.nodes[a.0].needs_grad {
                    let ga = self.unbroadcast(*a, g, None);
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    let gb = self.unbroadcast(*b, g, None);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    let ga = self.unbroadcast(*a, g, Some(*b));
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    let gb = self.unbroadcast(*b, g, Some(*a));
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(x, k) => self.accumulate(grads, *x, g.map(|v| v * k)),
            Op::Sigmoid(x) => {
                let data = g.data().iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), data)?);
            }
            Op::Tanh(x) => {
                let data = g.data().iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect();
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), data)?);
            }
            Op::Relu(x) => {
                let xin = self.value(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xin.data())
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), data)?);
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = split_axis(y.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * n * inner + k * inner + i;
                        let dot: f64 = (0..n).map(|k| g.data()[at(k)] * y.data()[at(k)]).sum();
                        for k in 0..n {
                            dx[at(k)] = y.data()[at(k)] * (g.data()[at(k)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::LogSoftmax { x, axis } => {
                let (outer, n, inner) = split_axis(y.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * n * inner + k * inner + i;
                        let gs: f64 = (0..n).map(|k| g.data()[at(k)]).sum();
                        for k in 0..n {
                            dx[at(k)] = g.data()[at(k)] - y.data()[at(k)].exp() * gs;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::LayerNorm { x, axis, inv_std } => {
                let (outer, n, inner) = split_axis(y.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * n * inner + k * inner + i;
                        let nf = n as f64;
                        let gm: f64 = (0..n).map(|k| g.data()[at(k)]).sum::<f64>() / nf;
                        let gy: f64 = (0..n).map(|k| g.data()[at(k)] * y.data()[at(k)]).sum::<f64>() / nf;
                        let s = inv_std[o * inner + i];
                        for k in 0..n {
                            dx[at(k)] = s * (g.data()[at(k)] - gm - y.data()[at(k)] * gy);
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::Dropout { x, mask } => {
                let data = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), data)?);
            }
            Op::MeanPool { x, axis } => {
                let xs = self.shape(*x).to_vec();
                let (outer, n, inner) = split_axis(&xs, *axis);
                let mut dx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for k in 0..n {
                        for i in 0..inner {
                            dx[o * n * inner + k * inner + i] = g.data()[o * inner + i] / n as f64;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xs, dx)?);
            }
            Op::MaxPool { x, argmax, .. } => {
                let xs = self.shape(*x).to_vec();
                let mut dx = Tensor::zeros(&xs);
                for (gv, &src) in g.data().iter().zip(argmax) {
                    dx.data_mut()[src] += gv;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let xs = self.shape(*x).to_vec();
                self.accumulate(grads, *x, Tensor::full(&xs, g.item()));
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = split_axis(y.shape(), *axis);
                let total = y.shape()[*axis];
                let mut offset = 0;
                for p in parts {
                    let ps = self.shape(*p).to_vec();
                    let len = ps[*axis];
                    if self.nodes[p.0].needs_grad {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let from = o * total * inner + offset * inner;
                            d.extend_from_slice(&g.data()[from..from + len * inner]);
                        }
                        self.accumulate(grads, *p, Tensor::new(ps, d)?);
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = self.shape(*x).to_vec();
                let (outer, n, inner) = split_axis(&xs, *axis);
                let len = y.shape()[*axis];
                let mut dx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let to = o * n * inner + start * inner;
                    dx[to..to + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *x, Tensor::new(xs, dx)?);
            }
            Op::Reshape(x) => {
                let xs = self.shape(*x).to_vec();
                self.accumulate(grads, *x, g.clone().reshape(&xs)?);
            }
            Op::Transpose(x) => {
                let (r, c) = (y.shape()[0], y.shape()[1]);
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[j * r + i] = g.data()[i * c + j];
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![c, r], dx)?);
            }
            Op::Embedding { table, indices } => {
                let ts = self.shape(*table).to_vec();
                let d = ts[1];
                let mut dt = Tensor::zeros(&ts);
                for (r, &i) in indices.iter().enumerate() {
                    for (o, gv) in dt.data_mut()[i * d..(i + 1) * d]
                        .iter_mut()
                        .zip(&g.data()[r * d..(r + 1) * d])
                    {
                        *o += gv;
                    }
                }
                self.accumulate(grads, *table, dt);
            }
            Op::CausalMask(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, v)| if *v == f64::NEG_INFINITY { 0.0 } else { *g })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), data)?);
            }
            Op::Pick { x, cols } => {
                let xs = self.shape(*x).to_vec();
                let c = xs[1];
                let mut dx = Tensor::zeros(&xs);
                for (r, &j) in cols.iter().enumerate() {
                    dx.data_mut()[r * c + j] += g.data()[r];
                }
                self.accumulate(grads, *x, dx);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3]));
        let s = g.softmax(x, 0).unwrap();
        for v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_constant_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[2, 5], 3.7));
        let y = g.layer_norm(x, 1).unwrap();
        assert!(g.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn errors_name_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
        let v = g.param(Tensor::zeros(&[2]));
        assert!(g.backward(v).is_err());
        assert!(matches!(g.embedding(a, &[5]), Err(Error::Vocabulary { .. })));
    }

    #[test]
    fn dropout_semantics() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1000], 2.0));
        assert_eq!(g.dropout(x, 0.0, &mut rng).unwrap(), x);
        let y = g.dropout(x, 0.3, &mut rng).unwrap();
        for v in g.value(y).data() {
            assert!(*v == 0.0 || (*v - 2.0 / 0.7).abs() < 1e-12);
        }
        assert!(g.dropout(x, 1.0, &mut rng).is_err());
    }

    #[test]
    fn causal_mask_blocks_future() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3, 3]));
        let m = g.causal_mask_fill(x).unwrap();
        let s = g.softmax(m, 1).unwrap();
        let v = g.value(s);
        assert_eq!(v.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(v.row(1), &[0.5, 0.5, 0.0]);
    }
}
