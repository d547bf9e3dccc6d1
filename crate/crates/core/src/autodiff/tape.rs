//! Reverse-mode tape.
//!
//! Every forward op appends a node holding its output value and the inputs
//! needed to replay the chain rule. `backward` walks the nodes in reverse
//! creation order, which is a valid topological order because a node can
//! only reference nodes created before it.

use rand::Rng;

use super::tensor::{numel, Parameter, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add { a: Var, b: Var, bcast: Option<Vec<usize>> },
    Sub { a: Var, b: Var, bcast: Option<Vec<usize>> },
    Mul { a: Var, b: Var, bcast: Option<Vec<usize>> },
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Dropout { a: Var, mask: Vec<f64> },
    Transpose(Var),
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { a: Var, axis: usize, start: usize },
    SoftmaxRows(Var),
    Standardize { a: Var, inv_std: Vec<f64> },
    Sum(Var),
    Mean(Var),
    Huber { a: Var, target: Vec<f64>, delta: f64 },
    Unfold { a: Var, patch: usize, width: usize, height: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

/// Gradients of a scalar loss with respect to every node on a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn bcast_map(op: &'static str, out: &[usize], small: &[usize]) -> Result<Option<Vec<usize>>> {
    if out == small {
        return Ok(None);
    }
    if small.len() > out.len() {
        return Err(Error::dim(op, format!("cannot broadcast {small:?} to {out:?}")));
    }
    let offset = out.len() - small.len();
    for (i, &d) in small.iter().enumerate() {
        if d != 1 && d != out[offset + i] {
            return Err(Error::dim(op, format!("cannot broadcast {small:?} to {out:?}")));
        }
    }
    // strides of `small` aligned to `out`, zero where broadcast
    let mut strides = vec![0usize; out.len()];
    let mut acc = 1;
    for i in (0..small.len()).rev() {
        if small[i] != 1 {
            strides[offset + i] = acc;
        }
        acc *= small[i];
    }
    let n = numel(out);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out.len()];
    for _ in 0..n {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for ax in (0..out.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok(Some(map))
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn huber_scalar(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a <= delta {
        0.5 * e * e
    } else {
        delta * a - 0.5 * delta * delta
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(x, y)| *x += y),
        None => *dst = Some(src.to_vec()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; gradients reach it but are not stored anywhere.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        let t = Tensor::raw(t.shape().to_vec(), t.into_data());
        self.push("constant", t, Op::Leaf)
    }

    /// Binds a parameter's current value as a trainable leaf.
    pub fn param(&mut self, p: &Parameter) -> Result<Var> {
        let t = Tensor::raw(p.tensor.shape().to_vec(), p.tensor.data().to_vec());
        let v = self.push("param", t, Op::Param)?;
        self.params.push((p.name.clone(), v));
        Ok(v)
    }

    /// Parameter leaves bound on this tape, in binding order.
    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    fn expect_rank(&self, op: &'static str, v: Var, rank: usize) -> Result<()> {
        let s = self.shape(v);
        if s.len() != rank {
            return Err(Error::dim(op, format!("expected rank {rank}, got shape {s:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.expect_rank("matmul", a, 2)?;
        self.expect_rank("matmul", b, 2)?;
        let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
        let (k2, n) = (self.shape(b)[0], self.shape(b)[1]);
        if k != k2 {
            return Err(Error::dim("matmul", format!("inner dimensions {k} and {k2} differ")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::raw(vec![m, n], out), Op::MatMul(a, b))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, Option<Vec<usize>>)> {
        let shape = self.shape(a).to_vec();
        let bcast = bcast_map(name, &shape, self.shape(b))?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f64> = match &bcast {
            None => av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
            Some(map) => av.iter().zip(map).map(|(&x, &j)| f(x, bv[j])).collect(),
        };
        Ok((Tensor::raw(shape, out), bcast))
    }

    /// `a + b`, where `b` broadcasts against `a` with trailing-axis alignment.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bcast) = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", t, Op::Add { a, b, bcast })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bcast) = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", t, Op::Sub { a, b, bcast })
    }

    /// Elementwise product with the same broadcasting rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bcast) = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", t, Op::Mul { a, b, bcast })
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.value(a);
        let t = Tensor::raw(v.shape().to_vec(), v.data().iter().map(|x| x * factor).collect());
        self.push("scale", t, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let t = Tensor::raw(v.shape().to_vec(), v.data().iter().map(|&x| x.max(0.0)).collect());
        self.push("relu", t, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let t = Tensor::raw(v.shape().to_vec(), v.data().iter().map(|&x| sigmoid_scalar(x)).collect());
        self.push("sigmoid", t, Op::Sigmoid(a))
    }

    /// Inverted dropout. Identity in eval mode or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(a).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let v = self.value(a);
        let t = Tensor::raw(v.shape().to_vec(), v.data().iter().zip(&mask).map(|(x, m)| x * m).collect());
        self.push("dropout", t, Op::Dropout { a, mask })
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.expect_rank("transpose", a, 2)?;
        let (r, c) = (self.shape(a)[0], self.shape(a)[1]);
        let out = transpose_raw(self.value(a).data(), r, c);
        self.push("transpose", Tensor::raw(vec![c, r], out), Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a);
        if numel(shape) != v.numel() || shape.contains(&0) {
            return Err(Error::dim("reshape", format!("cannot reshape {:?} to {shape:?}", v.shape())));
        }
        let t = Tensor::raw(shape.to_vec(), v.data().to_vec());
        self.push("reshape", t, Op::Reshape(a))
    }

    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        self.reshape(a, &[n])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range for rank {}", base.len())));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::dim("concat", format!("shape {s:?} incompatible with {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        self.push("concat", Tensor::raw(shape, out), Op::Concat { inputs: inputs.to_vec(), axis })
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("slice", format!("axis {axis} out of range for rank {}", shape.len())));
        }
        if len == 0 || start + len > shape[axis] {
            return Err(Error::dim("slice", format!("range {start}..{} exceeds axis size {}", start + len, shape[axis])));
        }
        let (outer, dim, inner) = axis_split(&shape, axis);
        let data = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            out.extend_from_slice(&data[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        self.push("slice", Tensor::raw(oshape, out), Op::Slice { a, axis, start })
    }

    /// Splits `a` into `parts` equal pieces along `axis`.
    pub fn split(&mut self, a: Var, axis: usize, parts: usize) -> Result<Vec<Var>> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("split", format!("axis {axis} out of range for rank {}", shape.len())));
        }
        if parts == 0 || shape[axis] % parts != 0 {
            return Err(Error::dim("split", format!("axis size {} not divisible into {parts} parts", shape[axis])));
        }
        let len = shape[axis] / parts;
        (0..parts).map(|i| self.slice(a, axis, i * len, len)).collect()
    }

    /// Stacks equal-shaped inputs along a new axis inserted at `axis`.
    pub fn stack(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::dim("stack", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis > base.len() {
            return Err(Error::dim("stack", format!("axis {axis} out of range for rank {}", base.len())));
        }
        if inputs.iter().any(|&v| self.shape(v) != base.as_slice()) {
            return Err(Error::dim("stack", "inputs differ in shape"));
        }
        let mut expanded = base.clone();
        expanded.insert(axis, 1);
        let reshaped = inputs
            .iter()
            .map(|&v| self.reshape(v, &expanded))
            .collect::<Result<Vec<_>>>()?;
        self.concat(&reshaped, axis)
    }

    /// Row-wise softmax of a matrix, shifted by the row maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.expect_rank("softmax_rows", a, 2)?;
        let (r, c) = (self.shape(a)[0], self.shape(a)[1]);
        let data = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &data[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for (o, &x) in orow.iter_mut().zip(row) {
                *o = (x - max).exp();
                sum += *o;
            }
            orow.iter_mut().for_each(|o| *o /= sum);
        }
        self.push("softmax_rows", Tensor::raw(vec![r, c], out), Op::SoftmaxRows(a))
    }

    /// Zero-mean, unit-variance normalization over the last axis (population variance).
    pub fn standardize(&mut self, a: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let d = *shape.last().ok_or_else(|| Error::dim("standardize", "scalar input"))?;
        let data = self.value(a).data();
        let rows = data.len() / d;
        let mut out = vec![0.0; data.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let x = &data[r * d..(r + 1) * d];
            let mean = x.iter().sum::<f64>() / d as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(x) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        self.push("standardize", Tensor::raw(shape, out), Op::Standardize { a, inv_std })
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta` of that axis' size.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = *self.shape(a).last().ok_or_else(|| Error::dim("layer_norm", "scalar input"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim("layer_norm", format!("gamma/beta must have shape [{d}]")));
        }
        let n = self.standardize(a, eps)?;
        let g = self.mul(n, gamma)?;
        self.add(g, beta)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a))
    }

    /// Elementwise Huber penalty of `target - a`.
    pub fn huber(&mut self, a: Var, target: &[f64], delta: f64) -> Result<Var> {
        if delta.is_nan() || delta <= 0.0 {
            return Err(Error::Config(format!("huber delta must be positive, got {delta}")));
        }
        let v = self.value(a);
        if v.numel() != target.len() {
            return Err(Error::dim("huber", format!("{} predictions vs {} targets", v.numel(), target.len())));
        }
        let out = v.data().iter().zip(target).map(|(p, y)| huber_scalar(y - p, delta)).collect();
        let t = Tensor::raw(v.shape().to_vec(), out);
        self.push("huber", t, Op::Huber { a, target: target.to_vec(), delta })
    }

    /// Zero-pads a `W×H` map (or `1×W×H`) to multiples of `patch` and returns
    /// the non-overlapping patches as rows of an `N × patch²` matrix.
    /// Patches are enumerated row-major over the padded grid.
    pub fn unfold_patches(&mut self, a: Var, patch: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (width, height) = match shape.as_slice() {
            [w, h] | [1, w, h] => (*w, *h),
            _ => return Err(Error::dim("unfold_patches", format!("expected W×H or 1×W×H, got {shape:?}"))),
        };
        if patch == 0 || patch > width || patch > height {
            return Err(Error::dim(
                "unfold_patches",
                format!("patch size {patch} does not fit a {width}×{height} map"),
            ));
        }
        let (pw, ph) = (width.div_ceil(patch), height.div_ceil(patch));
        let data = self.value(a).data();
        let pp = patch * patch;
        let mut out = vec![0.0; pw * ph * pp];
        for bi in 0..pw {
            for bj in 0..ph {
                let row = &mut out[(bi * ph + bj) * pp..(bi * ph + bj + 1) * pp];
                for i in 0..patch {
                    for j in 0..patch {
                        let (x, y) = (bi * patch + i, bj * patch + j);
                        if x < width && y < height {
                            row[i * patch + j] = data[x * height + y];
                        }
                    }
                }
            }
        }
        self.push(
            "unfold_patches",
            Tensor::raw(vec![pw * ph, pp], out),
            Op::Unfold { a, patch, width, height },
        )
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let bt = transpose_raw(self.value(*b).data(), k, n);
                add_into(&mut grads[a.0], &matmul_raw(g, &bt, m, n, k));
                let at = transpose_raw(self.value(*a).data(), m, k);
                add_into(&mut grads[b.0], &matmul_raw(&at, g, k, m, n));
            }
            Op::Add { a, b, bcast } | Op::Sub { a, b, bcast } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                add_into(&mut grads[a.0], g);
                let gb: Vec<f64> = match bcast {
                    None => g.iter().map(|x| sign * x).collect(),
                    Some(map) => {
                        let mut acc = vec![0.0; self.value(*b).numel()];
                        for (x, &j) in g.iter().zip(map) {
                            acc[j] += sign * x;
                        }
                        acc
                    }
                };
                add_into(&mut grads[b.0], &gb);
            }
            Op::Mul { a, b, bcast } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let (ga, gb): (Vec<f64>, Vec<f64>) = match bcast {
                    None => (
                        g.iter().zip(bv).map(|(x, y)| x * y).collect(),
                        g.iter().zip(av).map(|(x, y)| x * y).collect(),
                    ),
                    Some(map) => {
                        let ga = g.iter().zip(map).map(|(x, &j)| x * bv[j]).collect();
                        let mut gb = vec![0.0; bv.len()];
                        for ((x, &j), y) in g.iter().zip(map).zip(av) {
                            gb[j] += x * y;
                        }
                        (ga, gb)
                    }
                };
                add_into(&mut grads[a.0], &ga);
                add_into(&mut grads[b.0], &gb);
            }
            Op::Scale(a, f) => {
                let ga: Vec<f64> = g.iter().map(|x| x * f).collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                let ga: Vec<f64> = g.iter().zip(av).map(|(x, &v)| if v > 0.0 { *x } else { 0.0 }).collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Sigmoid(a) => {
                let ga: Vec<f64> = g.iter().zip(out.data()).map(|(x, s)| x * s * (1.0 - s)).collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Dropout { a, mask } => {
                let ga: Vec<f64> = g.iter().zip(mask).map(|(x, m)| x * m).collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                add_into(&mut grads[a.0], &transpose_raw(g, c, r));
            }
            Op::Reshape(a) => add_into(&mut grads[a.0], g),
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = self.shape(*v)[*axis];
                    let mut gv = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = o * total * inner + offset * inner;
                        gv.extend_from_slice(&g[base..base + len * inner]);
                    }
                    add_into(&mut grads[v.0], &gv);
                    offset += len;
                }
            }
            Op::Slice { a, axis, start } => {
                let (outer, dim, inner) = axis_split(self.shape(*a), *axis);
                let len = out.shape()[*axis];
                let mut ga = vec![0.0; outer * dim * inner];
                for o in 0..outer {
                    let base = o * dim * inner + start * inner;
                    ga[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::SoftmaxRows(a) => {
                let c = out.shape()[1];
                let y = out.data();
                let mut ga = vec![0.0; y.len()];
                for (r, (grow, yrow)) in g.chunks(c).zip(y.chunks(c)).enumerate() {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        ga[r * c + j] = yrow[j] * (grow[j] - dot);
                    }
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::Standardize { a, inv_std } => {
                let d = *out.shape().last().unwrap();
                let y = out.data();
                let mut ga = vec![0.0; y.len()];
                for (r, inv) in inv_std.iter().enumerate() {
                    let (gr, yr) = (&g[r * d..(r + 1) * d], &y[r * d..(r + 1) * d]);
                    let sg: f64 = gr.iter().sum();
                    let sgy: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        ga[r * d + j] = inv / d as f64 * (d as f64 * gr[j] - sg - yr[j] * sgy);
                    }
                }
                add_into(&mut grads[a.0], &ga);
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                add_into(&mut grads[a.0], &vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                add_into(&mut grads[a.0], &vec![g[0] / n as f64; n]);
            }
            Op::Huber { a, target, delta } => {
                let pv = self.value(*a).data();
                let ga: Vec<f64> = g
                    .iter()
                    .zip(pv)
                    .zip(target)
                    .map(|((x, p), y)| {
                        // d/dp of huber(y - p)
                        let e = y - p;
                        let de = if e.abs() <= *delta { e } else { delta * e.signum() };
                        -x * de
                    })
                    .collect();
                add_into(&mut grads[a.0], &ga);
            }
            Op::Unfold { a, patch, width, height } => {
                let (pw, ph) = (width.div_ceil(*patch), height.div_ceil(*patch));
                let pp = patch * patch;
                let mut ga = vec![0.0; width * height];
                for bi in 0..pw {
                    for bj in 0..ph {
                        let row = &g[(bi * ph + bj) * pp..(bi * ph + bj + 1) * pp];
                        for i in 0..*patch {
                            for j in 0..*patch {
                                let (x, y) = (bi * patch + i, bj * patch + j);
                                if x < *width && y < *height {
                                    ga[x * height + y] += row[i * patch + j];
                                }
                            }
                        }
                    }
                }
                add_into(&mut grads[a.0], &ga);
            }
        }
    }

    /// Adds this tape's parameter gradients into the matching parameters.
    pub fn accumulate_into(&self, grads: &Gradients, store: &mut impl ParamSink) -> Result<()> {
        for (name, v) in &self.params {
            let Some(g) = grads.get(*v) else { continue };
            let p = store
                .param_mut(name)
                .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
            p.tensor.accumulate_grad(g)?;
        }
        Ok(())
    }
}

/// Anything that can resolve a parameter by name for gradient accumulation.
pub trait ParamSink {
    fn param_mut(&mut self, name: &str) -> Option<&mut Parameter>;
}

impl ParamSink for std::collections::BTreeMap<String, Parameter> {
    fn param_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.get_mut(name)
    }
}
