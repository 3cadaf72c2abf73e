//! Operation tape with reverse-mode differentiation.
//!
//! A [`Graph`] owns every tensor produced during one forward pass. Nodes are
//! appended in execution order, so the node list is already topologically
//! sorted and [`Graph::backward`] walks it in reverse.

use super::kernels::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Fill value for masked attention scores; far below any real score, but
/// finite so forward values stay finite.
pub const MASKED_SCORE: f64 = -1e30;

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, transpose_b: bool },
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    Reshape(Var),
    SwapAxes { a: Var, i: usize, j: usize },
    Embedding { table: Var, ids: Vec<usize> },
    Softmax(Var),
    LayerNorm { a: Var, gain: Var, bias: Var, normalized: Vec<f64>, inv_std: Vec<f64> },
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    CausalMask(Var),
    Sum(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64>, count: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let data = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.shapes[v.0].clone(), data.clone()).ok()
    }

    pub fn data(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0)?.as_deref()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> Error {
    Error::InvalidOp { op, msg: msg.into() }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Source index for every destination element of `swap_axes`.
fn swap_index_map(shape: &[usize], i: usize, j: usize) -> Vec<usize> {
    let mut out_shape = shape.to_vec();
    out_shape.swap(i, j);
    let in_strides = strides(shape);
    let mut perm_strides = in_strides.clone();
    perm_strides.swap(i, j);
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..n {
        map.push(idx.iter().zip(&perm_strides).map(|(a, b)| a * b).sum());
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

fn softmax_rows(x: &[f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, dst) in x.chunks(width).zip(out.chunks_mut(width)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    out
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        debug_assert!(
            !inputs.iter().all(|v| self.nodes[v.0].value.is_finite()) || value.is_finite(),
            "non-finite output from finite inputs in {op:?}"
        );
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    /// Adds a leaf; its `requires_grad` flag decides whether gradients flow
    /// into it.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad;
        self.push(t, Op::Leaf, rg)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad())
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.leaf(t)
    }

    /// `a · b` where `a` is [..., k] and `b` is [k, n] (or [n, k] with
    /// `transpose_b`). Leading axes of `a` are treated as rows.
    pub fn matmul_ex(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() < 1 || tb.rank() != 2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let k = ta.last_dim();
        let (bk, n) = if transpose_b {
            (tb.shape()[1], tb.shape()[0])
        } else {
            (tb.shape()[0], tb.shape()[1])
        };
        if k != bk {
            return Err(mismatch("matmul", ta, tb));
        }
        let m = ta.rows();
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), transpose_b, &mut out, false);
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let value = Tensor::new(shape, out)?;
        Ok(self.derived(value, Op::MatMul { a, b, transpose_b }, &[a, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false)
    }

    /// Batched product of [G, m, k] with [G, k, n] (or [G, n, k] with
    /// `transpose_b`).
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 3 || tb.rank() != 3 || ta.shape()[0] != tb.shape()[0] {
            return Err(mismatch("batch_matmul", ta, tb));
        }
        let (g, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        let (bk, n) = if transpose_b {
            (tb.shape()[2], tb.shape()[1])
        } else {
            (tb.shape()[1], tb.shape()[2])
        };
        if k != bk {
            return Err(mismatch("batch_matmul", ta, tb));
        }
        let mut out = vec![0.0; g * m * n];
        for ((ab, bb), cb) in ta.data().chunks(m * k).zip(tb.data().chunks(k * n)).zip(out.chunks_mut(m * n)) {
            gemm(m, k, n, ab, false, bb, transpose_b, cb, false);
        }
        let value = Tensor::new(vec![g, m, n], out)?;
        Ok(self.derived(value, Op::BatchMatMul { a, b, transpose_b }, &[a, b]))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.derived(value, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.derived(value, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a vector of length `last_dim(a)` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let w = ta.last_dim();
        if tb.len() != w || tb.rank() != 1 {
            return Err(mismatch("add_bias", ta, tb));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(w) {
            for (x, b) in row.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.derived(value, Op::AddBias(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ta = self.value(a);
        let value = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x * factor).collect())?;
        Ok(self.derived(value, Op::Scale(a, factor), &[a]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| invalid("concat", "no inputs"))?);
        if axis >= first.rank() {
            return Err(invalid("concat", format!("axis {axis} out of range for {:?}", first.shape())));
        }
        let mut shape = first.shape().to_vec();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            let same_other = t.rank() == first.rank()
                && t.shape().iter().zip(first.shape()).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !same_other {
                return Err(mismatch("concat", first, t));
            }
            total += t.shape()[axis];
        }
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.derived(value, Op::Concat { parts: parts.to_vec(), axis }, parts))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        if axis >= ta.rank() || start > end || end > ta.shape()[axis] {
            return Err(invalid(
                "slice",
                format!("range {start}..{end} on axis {axis} of {:?}", ta.shape()),
            ));
        }
        let (outer, len, inner) = split_axis(ta.shape(), axis);
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&ta.data()[base + start * inner..base + end * inner]);
        }
        let mut shape = ta.shape().to_vec();
        shape[axis] = end - start;
        let value = Tensor::new(shape, data)?;
        Ok(self.derived(value, Op::Slice { a, axis, start }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if shape.iter().product::<usize>() != ta.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: ta.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let value = ta.clone().reshaped(shape.to_vec());
        Ok(self.derived(value, Op::Reshape(a), &[a]))
    }

    pub fn swap_axes(&mut self, a: Var, i: usize, j: usize) -> Result<Var> {
        let ta = self.value(a);
        if i >= ta.rank() || j >= ta.rank() {
            return Err(invalid("swap_axes", format!("axes {i},{j} for {:?}", ta.shape())));
        }
        let map = swap_index_map(ta.shape(), i, j);
        let data = map.iter().map(|&s| ta.data()[s]).collect();
        let mut shape = ta.shape().to_vec();
        shape.swap(i, j);
        let value = Tensor::new(shape, data)?;
        Ok(self.derived(value, Op::SwapAxes { a, i, j }, &[a]))
    }

    /// Rows of `table` ([V, D]) selected by `ids`; output shape is
    /// `ids_shape` followed by D.
    pub fn embedding(&mut self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if tt.rank() != 2 || ids_shape.iter().product::<usize>() != ids.len() {
            return Err(invalid(
                "embedding",
                format!("{} ids with shape {ids_shape:?} into table {:?}", ids.len(), tt.shape()),
            ));
        }
        let (v, d) = (tt.shape()[0], tt.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::IdOutOfRange { id, size: v });
            }
            data.extend_from_slice(&tt.data()[id * d..(id + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        let value = Tensor::new(shape, data)?;
        Ok(self.derived(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let value = Tensor::new(ta.shape().to_vec(), softmax_rows(ta.data(), ta.last_dim()))?;
        Ok(self.derived(value, Op::Softmax(a), &[a]))
    }

    /// Normalizes each row over the last axis, then applies `gain` and
    /// `bias`.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Result<Var> {
        let (ta, tg, tb) = (self.value(a), self.value(gain), self.value(bias));
        let w = ta.last_dim();
        if tg.len() != w || tb.len() != w {
            return Err(mismatch("layer_norm", ta, tg));
        }
        let mut normalized = Vec::with_capacity(ta.len());
        let mut inv_std = Vec::with_capacity(ta.rows());
        let mut out = Vec::with_capacity(ta.len());
        for row in ta.data().chunks(w) {
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(r);
            for (j, x) in row.iter().enumerate() {
                let xh = (x - mean) * r;
                normalized.push(xh);
                out.push(xh * tg.data()[j] + tb.data()[j]);
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.derived(
            value,
            Op::LayerNorm {
                a,
                gain,
                bias,
                normalized,
                inv_std,
            },
            &[a, gain, bias],
        ))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let ta = self.value(a);
        Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, f64::tanh)?;
        Ok(self.derived(value, Op::Tanh(a), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, sigmoid)?;
        Ok(self.derived(value, Op::Sigmoid(a), &[a]))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let value = self.map(a, gelu)?;
        Ok(self.derived(value, Op::Gelu(a), &[a]))
    }

    /// Replaces entries above the diagonal of each trailing T×T block with
    /// [`MASKED_SCORE`].
    pub fn causal_mask(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let t = ta.last_dim();
        if ta.rank() < 2 || ta.shape()[ta.rank() - 2] != t {
            return Err(invalid("causal_mask", format!("trailing block of {:?} is not square", ta.shape())));
        }
        let mut data = ta.data().to_vec();
        for block in data.chunks_mut(t * t) {
            for i in 0..t {
                for x in &mut block[i * t + i + 1..(i + 1) * t] {
                    *x = MASKED_SCORE;
                }
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.derived(value, Op::CausalMask(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        Ok(self.derived(value, Op::Sum(a), &[a]))
    }

    /// Mean negative log-likelihood of `targets` under softmax(`logits`)
    /// over the last axis. Rows whose target equals `ignore_id` are
    /// excluded from both the sum and the count.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore_id: Option<usize>) -> Result<Var> {
        let tl = self.value(logits);
        let v = tl.last_dim();
        if targets.len() != tl.rows() {
            return Err(invalid(
                "cross_entropy",
                format!("{} targets for logits {:?}", targets.len(), tl.shape()),
            ));
        }
        let mut probs = Vec::with_capacity(tl.len());
        let mut total = 0.0;
        let mut count = 0;
        for (row, &target) in tl.data().chunks(v).zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            probs.extend(row.iter().map(|x| (x - lse).exp()));
            if Some(target) == ignore_id {
                continue;
            }
            if target >= v {
                return Err(Error::IdOutOfRange { id: target, size: v });
            }
            total += lse - row[target];
            count += 1;
        }
        if count == 0 {
            return Err(Error::AllTargetsIgnored);
        }
        let targets = targets
            .iter()
            .map(|&t| if Some(t) == ignore_id { usize::MAX } else { t })
            .collect();
        let value = Tensor::scalar(total / count as f64);
        Ok(self.derived(
            value,
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            },
            &[logits],
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..n).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, idx: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        // accumulate into an input's gradient buffer
        let acc = |v: Var, grads: &mut [Option<Vec<f64>>], f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(g);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, transpose_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.last_dim(), out.last_dim());
                acc(*a, grads, &mut |ga| {
                    // dA = dY · B^T  (B stored k×n) or dY · B (B stored n×k)
                    gemm(m, n, k, gy, false, tb.data(), !*transpose_b, ga, true);
                });
                acc(*b, grads, &mut |gb| {
                    if *transpose_b {
                        gemm(n, m, k, gy, true, ta.data(), false, gb, true);
                    } else {
                        gemm(k, m, n, ta.data(), true, gy, false, gb, true);
                    }
                });
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (g, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = out.shape()[2];
                acc(*a, grads, &mut |ga| {
                    for i in 0..g {
                        gemm(
                            m,
                            n,
                            k,
                            &gy[i * m * n..(i + 1) * m * n],
                            false,
                            &tb.data()[i * k * n..(i + 1) * k * n],
                            !*transpose_b,
                            &mut ga[i * m * k..(i + 1) * m * k],
                            true,
                        );
                    }
                });
                acc(*b, grads, &mut |gb| {
                    for i in 0..g {
                        let gyi = &gy[i * m * n..(i + 1) * m * n];
                        let ai = &ta.data()[i * m * k..(i + 1) * m * k];
                        let gbi = &mut gb[i * k * n..(i + 1) * k * n];
                        if *transpose_b {
                            gemm(n, m, k, gyi, true, ai, false, gbi, true);
                        } else {
                            gemm(k, m, n, ai, true, gyi, false, gbi, true);
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, grads, &mut |g| g.iter_mut().zip(gy).for_each(|(x, d)| *x += d));
                }
            }
            Op::AddBias(a, bias) => {
                acc(*a, grads, &mut |g| g.iter_mut().zip(gy).for_each(|(x, d)| *x += d));
                let w = out.last_dim();
                acc(*bias, grads, &mut |g| {
                    for row in gy.chunks(w) {
                        g.iter_mut().zip(row).for_each(|(x, d)| *x += d);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, grads, &mut |g| {
                    for ((x, d), y) in g.iter_mut().zip(gy).zip(tb.data()) {
                        *x += d * y;
                    }
                });
                acc(*b, grads, &mut |g| {
                    for ((x, d), y) in g.iter_mut().zip(gy).zip(ta.data()) {
                        *x += d * y;
                    }
                });
            }
            Op::Scale(a, f) => {
                acc(*a, grads, &mut |g| g.iter_mut().zip(gy).for_each(|(x, d)| *x += d * f));
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).shape()[*axis];
                    acc(p, grads, &mut |g| {
                        for o in 0..outer {
                            let src = &gy[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            let dst = &mut g[o * len * inner..(o + 1) * len * inner];
                            dst.iter_mut().zip(src).for_each(|(x, d)| *x += d);
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { a, axis, start } => {
                let (outer, len, inner) = split_axis(self.value(*a).shape(), *axis);
                let width = out.shape()[*axis];
                acc(*a, grads, &mut |g| {
                    for o in 0..outer {
                        let dst = &mut g[(o * len + start) * inner..(o * len + start + width) * inner];
                        let src = &gy[o * width * inner..(o + 1) * width * inner];
                        dst.iter_mut().zip(src).for_each(|(x, d)| *x += d);
                    }
                });
            }
            Op::Reshape(a) => {
                acc(*a, grads, &mut |g| g.iter_mut().zip(gy).for_each(|(x, d)| *x += d));
            }
            Op::SwapAxes { a, i, j } => {
                let map = swap_index_map(self.value(*a).shape(), *i, *j);
                acc(*a, grads, &mut |g| {
                    for (d, &s) in gy.iter().zip(&map) {
                        g[s] += d;
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).last_dim();
                acc(*table, grads, &mut |g| {
                    for (row, &id) in gy.chunks(d).zip(ids) {
                        g[id * d..(id + 1) * d].iter_mut().zip(row).for_each(|(x, dv)| *x += dv);
                    }
                });
            }
            Op::Softmax(a) => {
                let w = out.last_dim();
                acc(*a, grads, &mut |g| {
                    for ((grow, yrow), dyrow) in g.chunks_mut(w).zip(out.data().chunks(w)).zip(gy.chunks(w)) {
                        let dot: f64 = yrow.iter().zip(dyrow).map(|(y, d)| y * d).sum();
                        for ((x, y), d) in grow.iter_mut().zip(yrow).zip(dyrow) {
                            *x += y * (d - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                a,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let w = out.last_dim();
                let gv = self.value(*gain).data();
                acc(*a, grads, &mut |g| {
                    let mut dxh = vec![0.0; w];
                    for (r, ((grow, dyrow), xhrow)) in
                        g.chunks_mut(w).zip(gy.chunks(w)).zip(normalized.chunks(w)).enumerate()
                    {
                        for j in 0..w {
                            dxh[j] = dyrow[j] * gv[j];
                        }
                        let s1: f64 = dxh.iter().sum();
                        let s2: f64 = dxh.iter().zip(xhrow).map(|(d, x)| d * x).sum();
                        let k = inv_std[r] / w as f64;
                        for j in 0..w {
                            grow[j] += k * (w as f64 * dxh[j] - s1 - xhrow[j] * s2);
                        }
                    }
                });
                acc(*gain, grads, &mut |g| {
                    for (dyrow, xhrow) in gy.chunks(w).zip(normalized.chunks(w)) {
                        for j in 0..w {
                            g[j] += dyrow[j] * xhrow[j];
                        }
                    }
                });
                acc(*bias, grads, &mut |g| {
                    for dyrow in gy.chunks(w) {
                        g.iter_mut().zip(dyrow).for_each(|(x, d)| *x += d);
                    }
                });
            }
            Op::Tanh(a) => {
                acc(*a, grads, &mut |g| {
                    for ((x, d), y) in g.iter_mut().zip(gy).zip(out.data()) {
                        *x += d * (1.0 - y * y);
                    }
                });
            }
            Op::Sigmoid(a) => {
                acc(*a, grads, &mut |g| {
                    for ((x, d), y) in g.iter_mut().zip(gy).zip(out.data()) {
                        *x += d * y * (1.0 - y);
                    }
                });
            }
            Op::Gelu(a) => {
                let input = self.value(*a).data();
                acc(*a, grads, &mut |g| {
                    for ((x, d), xi) in g.iter_mut().zip(gy).zip(input) {
                        *x += d * gelu_grad(*xi);
                    }
                });
            }
            Op::CausalMask(a) => {
                let t = out.last_dim();
                acc(*a, grads, &mut |g| {
                    for (gb, db) in g.chunks_mut(t * t).zip(gy.chunks(t * t)) {
                        for i in 0..t {
                            for j in 0..=i {
                                gb[i * t + j] += db[i * t + j];
                            }
                        }
                    }
                });
            }
            Op::Sum(a) => {
                acc(*a, grads, &mut |g| g.iter_mut().for_each(|x| *x += gy[0]));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let v = self.value(*logits).last_dim();
                let scale = gy[0] / *count as f64;
                acc(*logits, grads, &mut |g| {
                    for ((grow, prow), &t) in g.chunks_mut(v).zip(probs.chunks(v)).zip(targets) {
                        if t == usize::MAX {
                            continue;
                        }
                        for (x, p) in grow.iter_mut().zip(prow) {
                            *x += scale * p;
                        }
                        grow[t] -= scale;
                    }
                });
            }
        }
    }
}
