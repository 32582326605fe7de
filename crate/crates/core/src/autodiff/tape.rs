//! Computation tape for reverse-mode differentiation.
//!
//! Forward operations append nodes to a [`Tape`]; the tape is therefore
//! always topologically ordered and backward traverses it once in reverse.
//! Gradients accumulate into the leaf tensors that were created with
//! `requires_grad` set.

use super::tensor::Tensor;
use crate::error::{NgfError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

/// Reduction semantics for [`Tape::reduce`].
///
/// Min/max subgradients route to the first attaining index along the axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Min,
    Max,
    Mean,
    Sum,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// y = x·W + b over rows of x; inputs `[x, w, b]`.
    Affine,
    Relu,
    Sigmoid,
    /// Softmax along the last axis.
    SoftmaxLast,
    Ln,
    Clamp {
        lo: f64,
        hi: f64,
    },
    Sqrt,
    PowScalar {
        exponent: f64,
    },
    Add,
    Sub,
    Mul,
    AddScalar,
    MulScalar {
        c: f64,
    },
    /// Elementwise min of two same-shape tensors; ties route grad to the
    /// first argument.
    PairMin,
    PairMax,
    PairMean,
    Reduce {
        axis: usize,
        kind: ReduceKind,
    },
    Concat {
        axis: usize,
    },
    GatherRows {
        indices: Vec<usize>,
    },
    Reshape,
    Slice {
        axis: usize,
        start: usize,
        len: usize,
    },
    SumAll,
    MeanAll,
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<VarId>,
    tensor: Tensor,
    needs_grad: bool,
}

/// A single-use computation graph. Append-only, acyclic by construction.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Neumaier compensated sum; keeps reductions insensitive to operand order.
fn compensated_sum(it: impl Iterator<Item = f64>) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for v in it {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
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

    /// Register an input tensor. Its `requires_grad` flag decides whether
    /// backward will populate its gradient.
    pub fn leaf(&mut self, tensor: Tensor) -> VarId {
        let needs = tensor.requires_grad();
        self.push(Op::Leaf, vec![], tensor, needs)
    }

    /// Convenience: leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> VarId {
        let t = tensor;
        debug_assert!(!t.requires_grad());
        self.push(Op::Leaf, vec![], t, false)
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].tensor
    }

    /// Leaf gradient after backward, if populated.
    pub fn grad(&self, id: VarId) -> Option<&[f64]> {
        self.nodes[id.0].tensor.grad()
    }

    /// Move a leaf's tensor (with any accumulated gradient) out of the tape.
    pub fn take_tensor(&mut self, id: VarId) -> Tensor {
        std::mem::replace(&mut self.nodes[id.0].tensor, Tensor::scalar(0.0))
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.tensor.zero_grad();
        }
    }

    fn push(&mut self, op: Op, inputs: Vec<VarId>, tensor: Tensor, needs_grad: bool) -> VarId {
        self.nodes.push(Node {
            op,
            inputs,
            tensor,
            needs_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, op: Op, inputs: Vec<VarId>, tensor: Tensor) -> VarId {
        let needs = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.push(op, inputs, tensor, needs)
    }

    // ── Forward operations ──────────────────────────────────────────────

    /// y[i,j] = Σ_k x[i,k]·W[k,j] + b[j].
    pub fn affine(&mut self, x: VarId, w: VarId, b: VarId) -> Result<VarId> {
        let (xs, ws, bs) = (
            self.value(x).shape().to_vec(),
            self.value(w).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 {
            return Err(NgfError::Shape(format!(
                "affine expects x:2-d, w:2-d, b:1-d, got {xs:?}/{ws:?}/{bs:?}"
            )));
        }
        let (n, d_in, d_out) = (xs[0], xs[1], ws[1]);
        if ws[0] != d_in || bs[0] != d_out {
            return Err(NgfError::Shape(format!(
                "affine inner dims disagree: x {xs:?}, w {ws:?}, b {bs:?}"
            )));
        }
        let xv = self.value(x).values();
        let wv = self.value(w).values();
        let bv = self.value(b).values();
        let mut out = vec![0.0; n * d_out];
        for i in 0..n {
            let row = &mut out[i * d_out..(i + 1) * d_out];
            row.copy_from_slice(bv);
            for k in 0..d_in {
                let a = xv[i * d_in + k];
                if a == 0.0 {
                    continue;
                }
                let wrow = &wv[k * d_out..(k + 1) * d_out];
                for (r, wkj) in row.iter_mut().zip(wrow) {
                    *r += a * wkj;
                }
            }
        }
        Ok(self.push_op(
            Op::Affine,
            vec![x, w, b],
            Tensor::from_parts(vec![n, d_out], out),
        ))
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let t = self.value(x);
        let out: Vec<f64> = t.values().iter().map(|&v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        self.push_op(Op::Relu, vec![x], Tensor::from_parts(shape, out))
    }

    pub fn sigmoid(&mut self, x: VarId) -> VarId {
        let t = self.value(x);
        let out: Vec<f64> = t.values().iter().map(|&v| sigmoid(v)).collect();
        let shape = t.shape().to_vec();
        self.push_op(Op::Sigmoid, vec![x], Tensor::from_parts(shape, out))
    }

    /// Softmax along the last axis (numerically stabilized by row max).
    pub fn softmax_last(&mut self, x: VarId) -> VarId {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let c = *shape.last().expect("softmax needs rank >= 1");
        let mut out = t.values().to_vec();
        for row in out.chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push_op(Op::SoftmaxLast, vec![x], Tensor::from_parts(shape, out))
    }

    pub fn ln(&mut self, x: VarId) -> VarId {
        let t = self.value(x);
        let out: Vec<f64> = t.values().iter().map(|&v| v.ln()).collect();
        let shape = t.shape().to_vec();
        self.push_op(Op::Ln, vec![x], Tensor::from_parts(shape, out))
    }

    pub fn clamp(&mut self, x: VarId, lo: f64, hi: f64) -> VarId {
        let t = self.value(x);
        let out: Vec<f64> = t.values().iter().map(|&v| v.clamp(lo, hi)).collect();
        let shape = t.shape().to_vec();
        self.push_op(Op::Clamp { lo, hi }, vec![x], Tensor::from_parts(shape, out))
    }

    pub fn sqrt(&mut self, x: VarId) -> VarId {
        let t = self.value(x);
        let out: Vec<f64> = t.values().iter().map(|&v| v.sqrt()).collect();
        let shape = t.shape().to_vec();
        self.push_op(Op::Sqrt, vec![x], Tensor::from_parts(shape, out))
    }

    pub fn pow_scalar(&mut self, x: VarId, exponent: f64) -> VarId {
        let t = self.value(x);
        let out: Vec<f64> = t.values().iter().map(|&v| v.powf(exponent)).collect();
        let shape = t.shape().to_vec();
        self.push_op(
            Op::PowScalar { exponent },
            vec![x],
            Tensor::from_parts(shape, out),
        )
    }

    fn binary_same_shape(&mut self, op: Op, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(NgfError::Shape(format!(
                "elementwise op on mismatched shapes {sa:?} vs {sb:?}"
            )));
        }
        let shape = sa.to_vec();
        let av = self.value(a).values();
        let bv = self.value(b).values();
        let out: Vec<f64> = match op {
            Op::Add => av.iter().zip(bv).map(|(x, y)| x + y).collect(),
            Op::Sub => av.iter().zip(bv).map(|(x, y)| x - y).collect(),
            Op::Mul => av.iter().zip(bv).map(|(x, y)| x * y).collect(),
            Op::PairMin => av.iter().zip(bv).map(|(x, y)| x.min(*y)).collect(),
            Op::PairMax => av.iter().zip(bv).map(|(x, y)| x.max(*y)).collect(),
            Op::PairMean => av.iter().zip(bv).map(|(x, y)| 0.5 * (x + y)).collect(),
            _ => unreachable!("binary_same_shape misuse"),
        };
        Ok(self.push_op(op, vec![a, b], Tensor::from_parts(shape, out)))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape(Op::Add, a, b)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape(Op::Sub, a, b)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape(Op::Mul, a, b)
    }

    pub fn pair_min(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape(Op::PairMin, a, b)
    }

    pub fn pair_max(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape(Op::PairMax, a, b)
    }

    pub fn pair_mean(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape(Op::PairMean, a, b)
    }

    pub fn add_scalar(&mut self, x: VarId, c: f64) -> VarId {
        let t = self.value(x);
        let out: Vec<f64> = t.values().iter().map(|&v| v + c).collect();
        let shape = t.shape().to_vec();
        self.push_op(Op::AddScalar, vec![x], Tensor::from_parts(shape, out))
    }

    pub fn mul_scalar(&mut self, x: VarId, c: f64) -> VarId {
        let t = self.value(x);
        let out: Vec<f64> = t.values().iter().map(|&v| v * c).collect();
        let shape = t.shape().to_vec();
        self.push_op(Op::MulScalar { c }, vec![x], Tensor::from_parts(shape, out))
    }

    /// Reduce along `axis`; the output drops that axis.
    pub fn reduce(&mut self, x: VarId, axis: usize, kind: ReduceKind) -> Result<VarId> {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        if axis >= shape.len() {
            return Err(NgfError::Contract(format!(
                "reduce axis {axis} out of range for shape {shape:?}"
            )));
        }
        let (outer, mid, inner) = split_axis(&shape, axis);
        if mid == 0 {
            return Err(NgfError::Domain("reduce over an empty axis".into()));
        }
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let v = t.values();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * mid * inner + i;
                let slice = (0..mid).map(|m| v[base + m * inner]);
                out[o * inner + i] = match kind {
                    ReduceKind::Min => slice.fold(f64::INFINITY, f64::min),
                    ReduceKind::Max => slice.fold(f64::NEG_INFINITY, f64::max),
                    ReduceKind::Sum => compensated_sum(slice),
                    ReduceKind::Mean => compensated_sum(slice) / mid as f64,
                };
            }
        }
        Ok(self.push_op(
            Op::Reduce { axis, kind },
            vec![x],
            Tensor::from_parts(out_shape, out),
        ))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[VarId], axis: usize) -> Result<VarId> {
        if parts.is_empty() {
            return Err(NgfError::Contract("concat of zero tensors".into()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(NgfError::Contract(format!(
                "concat axis {axis} out of range for shape {first:?}"
            )));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(NgfError::Shape(format!(
                    "concat operand shape {s:?} incompatible with {first:?} on axis {axis}"
                )));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut out = vec![0.0; out_shape.iter().product()];
        let block_out = axis_total * inner;
        let mut offset = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let block_in = s[axis] * inner;
            let v = self.value(p).values();
            for o in 0..outer {
                out[o * block_out + offset..o * block_out + offset + block_in]
                    .copy_from_slice(&v[o * block_in..(o + 1) * block_in]);
            }
            offset += block_in;
        }
        Ok(self.push_op(
            Op::Concat { axis },
            parts.to_vec(),
            Tensor::from_parts(out_shape, out),
        ))
    }

    /// Select rows of a 2-D tensor; rows may repeat.
    pub fn gather_rows(&mut self, x: VarId, indices: Vec<usize>) -> Result<VarId> {
        let t = self.value(x);
        let shape = t.shape();
        if shape.len() != 2 {
            return Err(NgfError::Contract(format!(
                "gather_rows expects a 2-d tensor, got {shape:?}"
            )));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(NgfError::Contract(format!(
                "gather_rows index {bad} out of range 0..{rows}"
            )));
        }
        let v = t.values();
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in &indices {
            out.extend_from_slice(&v[i * cols..(i + 1) * cols]);
        }
        let n = indices.len();
        Ok(self.push_op(
            Op::GatherRows { indices },
            vec![x],
            Tensor::from_parts(vec![n, cols], out),
        ))
    }

    pub fn reshape(&mut self, x: VarId, shape: Vec<usize>) -> Result<VarId> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() {
            return Err(NgfError::Shape(format!(
                "reshape {:?} -> {shape:?} changes element count",
                t.shape()
            )));
        }
        let out = Tensor::from_parts(shape, t.values().to_vec());
        Ok(self.push_op(Op::Reshape, vec![x], out))
    }

    /// Contiguous range along one axis.
    pub fn slice(&mut self, x: VarId, axis: usize, start: usize, len: usize) -> Result<VarId> {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(NgfError::Contract(format!(
                "slice [{start}, {start}+{len}) on axis {axis} invalid for shape {shape:?}"
            )));
        }
        let (outer, mid, inner) = split_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let v = t.values();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * mid * inner + start * inner;
            out.extend_from_slice(&v[base..base + len * inner]);
        }
        Ok(self.push_op(
            Op::Slice { axis, start, len },
            vec![x],
            Tensor::from_parts(out_shape, out),
        ))
    }

    pub fn sum_all(&mut self, x: VarId) -> VarId {
        let s = compensated_sum(self.value(x).values().iter().copied());
        self.push_op(Op::SumAll, vec![x], Tensor::scalar_unchecked(s))
    }

    pub fn mean_all(&mut self, x: VarId) -> VarId {
        let n = self.value(x).len();
        let s = compensated_sum(self.value(x).values().iter().copied()) / n as f64;
        self.push_op(Op::MeanAll, vec![x], Tensor::scalar_unchecked(s))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Propagate d(loss)/d(leaf) for every leaf with `requires_grad`,
    /// accumulating into the leaves' grad buffers.
    ///
    /// Each node is visited exactly once (reverse construction order is a
    /// reverse topological order). Calling backward again without
    /// [`Tape::zero_grads`] adds into the existing leaf gradients.
    pub fn backward(&mut self, root: VarId) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(NgfError::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut adjoint: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoint[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = adjoint[id].take() else {
                continue;
            };
            if matches!(self.nodes[id].op, Op::Leaf) {
                self.nodes[id].tensor.accumulate_grad(&g);
            } else {
                self.propagate(id, &g, &mut adjoint);
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], adjoint: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let add_to = |adjoint: &mut [Option<Vec<f64>>], input: VarId, contrib: &[f64]| {
            if !self.nodes[input.0].needs_grad {
                return;
            }
            let slot = &mut adjoint[input.0];
            match slot {
                Some(buf) => {
                    for (b, c) in buf.iter_mut().zip(contrib) {
                        *b += c;
                    }
                }
                None => *slot = Some(contrib.to_vec()),
            }
        };
        match &node.op {
            Op::Leaf => unreachable!("leaf handled by backward"),
            Op::Affine => {
                let (x, w, b) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let xs = self.value(x).shape();
                let (n, d_in) = (xs[0], xs[1]);
                let d_out = self.value(w).shape()[1];
                let xv = self.value(x).values();
                let wv = self.value(w).values();
                if self.nodes[x.0].needs_grad {
                    let mut gx = vec![0.0; n * d_in];
                    for i in 0..n {
                        for k in 0..d_in {
                            let grow = &g[i * d_out..(i + 1) * d_out];
                            let wrow = &wv[k * d_out..(k + 1) * d_out];
                            gx[i * d_in + k] =
                                grow.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                    add_to(adjoint, x, &gx);
                }
                if self.nodes[w.0].needs_grad {
                    let mut gw = vec![0.0; d_in * d_out];
                    for i in 0..n {
                        let grow = &g[i * d_out..(i + 1) * d_out];
                        for k in 0..d_in {
                            let a = xv[i * d_in + k];
                            if a == 0.0 {
                                continue;
                            }
                            let wrow = &mut gw[k * d_out..(k + 1) * d_out];
                            for (t, gj) in wrow.iter_mut().zip(grow) {
                                *t += a * gj;
                            }
                        }
                    }
                    add_to(adjoint, w, &gw);
                }
                if self.nodes[b.0].needs_grad {
                    let mut gb = vec![0.0; d_out];
                    for i in 0..n {
                        for j in 0..d_out {
                            gb[j] += g[i * d_out + j];
                        }
                    }
                    add_to(adjoint, b, &gb);
                }
            }
            Op::Relu => {
                let xv = self.value(node.inputs[0]).values();
                let gx: Vec<f64> = xv
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| if x > 0.0 { gi } else { 0.0 })
                    .collect();
                add_to(adjoint, node.inputs[0], &gx);
            }
            Op::Sigmoid => {
                let s = node.tensor.values();
                let gx: Vec<f64> = s.iter().zip(g).map(|(&y, &gi)| gi * y * (1.0 - y)).collect();
                add_to(adjoint, node.inputs[0], &gx);
            }
            Op::SoftmaxLast => {
                let s = node.tensor.values();
                let c = *node.tensor.shape().last().unwrap();
                let mut gx = vec![0.0; s.len()];
                for (row, (srow, grow)) in s.chunks(c).zip(g.chunks(c)).enumerate() {
                    let dot: f64 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[row * c + j] = srow[j] * (grow[j] - dot);
                    }
                }
                add_to(adjoint, node.inputs[0], &gx);
            }
            Op::Ln => {
                let xv = self.value(node.inputs[0]).values();
                let gx: Vec<f64> = xv.iter().zip(g).map(|(&x, &gi)| gi / x).collect();
                add_to(adjoint, node.inputs[0], &gx);
            }
            Op::Clamp { lo, hi } => {
                let xv = self.value(node.inputs[0]).values();
                let gx: Vec<f64> = xv
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| if x > *lo && x < *hi { gi } else { 0.0 })
                    .collect();
                add_to(adjoint, node.inputs[0], &gx);
            }
            Op::Sqrt => {
                let y = node.tensor.values();
                let gx: Vec<f64> = y
                    .iter()
                    .zip(g)
                    .map(|(&s, &gi)| if s > 0.0 { gi * 0.5 / s } else { 0.0 })
                    .collect();
                add_to(adjoint, node.inputs[0], &gx);
            }
            Op::PowScalar { exponent } => {
                let p = *exponent;
                let xv = self.value(node.inputs[0]).values();
                let gx: Vec<f64> = xv
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| {
                        if p == 0.0 || (x == 0.0 && p < 1.0) {
                            0.0
                        } else {
                            gi * p * x.powf(p - 1.0)
                        }
                    })
                    .collect();
                add_to(adjoint, node.inputs[0], &gx);
            }
            Op::Add => {
                add_to(adjoint, node.inputs[0], g);
                add_to(adjoint, node.inputs[1], g);
            }
            Op::Sub => {
                add_to(adjoint, node.inputs[0], g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                add_to(adjoint, node.inputs[1], &neg);
            }
            Op::Mul => {
                let av = self.value(node.inputs[0]).values();
                let bv = self.value(node.inputs[1]).values();
                let ga: Vec<f64> = bv.iter().zip(g).map(|(b, gi)| b * gi).collect();
                let gb: Vec<f64> = av.iter().zip(g).map(|(a, gi)| a * gi).collect();
                add_to(adjoint, node.inputs[0], &ga);
                add_to(adjoint, node.inputs[1], &gb);
            }
            Op::AddScalar => add_to(adjoint, node.inputs[0], g),
            Op::MulScalar { c } => {
                let gx: Vec<f64> = g.iter().map(|v| v * c).collect();
                add_to(adjoint, node.inputs[0], &gx);
            }
            Op::PairMin | Op::PairMax => {
                let av = self.value(node.inputs[0]).values();
                let bv = self.value(node.inputs[1]).values();
                let is_min = matches!(node.op, Op::PairMin);
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                for i in 0..av.len() {
                    // Ties route to the first argument.
                    let first_wins = if is_min {
                        av[i] <= bv[i]
                    } else {
                        av[i] >= bv[i]
                    };
                    if first_wins {
                        ga[i] = g[i];
                    } else {
                        gb[i] = g[i];
                    }
                }
                add_to(adjoint, node.inputs[0], &ga);
                add_to(adjoint, node.inputs[1], &gb);
            }
            Op::PairMean => {
                let half: Vec<f64> = g.iter().map(|v| 0.5 * v).collect();
                add_to(adjoint, node.inputs[0], &half);
                add_to(adjoint, node.inputs[1], &half);
            }
            Op::Reduce { axis, kind } => {
                let x = node.inputs[0];
                let shape = self.value(x).shape().to_vec();
                let (outer, mid, inner) = split_axis(&shape, *axis);
                let xv = self.value(x).values();
                let mut gx = vec![0.0; xv.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * mid * inner + i;
                        let go = g[o * inner + i];
                        match kind {
                            ReduceKind::Sum => {
                                for m in 0..mid {
                                    gx[base + m * inner] = go;
                                }
                            }
                            ReduceKind::Mean => {
                                let s = go / mid as f64;
                                for m in 0..mid {
                                    gx[base + m * inner] = s;
                                }
                            }
                            ReduceKind::Min | ReduceKind::Max => {
                                // First attaining index wins the subgradient.
                                let mut best = 0;
                                for m in 1..mid {
                                    let v = xv[base + m * inner];
                                    let better = match kind {
                                        ReduceKind::Min => v < xv[base + best * inner],
                                        _ => v > xv[base + best * inner],
                                    };
                                    if better {
                                        best = m;
                                    }
                                }
                                gx[base + best * inner] = go;
                            }
                        }
                    }
                }
                add_to(adjoint, x, &gx);
            }
            Op::Concat { axis } => {
                let out_shape = node.tensor.shape().to_vec();
                let (outer, _, inner) = split_axis(&out_shape, *axis);
                let block_out = out_shape[*axis] * inner;
                let mut offset = 0;
                for &p in &node.inputs {
                    let s = self.value(p).shape();
                    let block_in = s[*axis] * inner;
                    if self.nodes[p.0].needs_grad {
                        let mut gp = vec![0.0; self.value(p).len()];
                        for o in 0..outer {
                            gp[o * block_in..(o + 1) * block_in].copy_from_slice(
                                &g[o * block_out + offset..o * block_out + offset + block_in],
                            );
                        }
                        add_to(adjoint, p, &gp);
                    }
                    offset += block_in;
                }
            }
            Op::GatherRows { indices } => {
                let x = node.inputs[0];
                let cols = self.value(x).shape()[1];
                let mut gx = vec![0.0; self.value(x).len()];
                for (row, &i) in indices.iter().enumerate() {
                    for j in 0..cols {
                        gx[i * cols + j] += g[row * cols + j];
                    }
                }
                add_to(adjoint, x, &gx);
            }
            Op::Reshape => add_to(adjoint, node.inputs[0], g),
            Op::Slice { axis, start, len } => {
                let x = node.inputs[0];
                let shape = self.value(x).shape().to_vec();
                let (outer, mid, inner) = split_axis(&shape, *axis);
                let mut gx = vec![0.0; self.value(x).len()];
                for o in 0..outer {
                    let base = o * mid * inner + start * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                add_to(adjoint, x, &gx);
            }
            Op::SumAll => {
                let n = self.value(node.inputs[0]).len();
                add_to(adjoint, node.inputs[0], &vec![g[0]; n]);
            }
            Op::MeanAll => {
                let n = self.value(node.inputs[0]).len();
                add_to(adjoint, node.inputs[0], &vec![g[0] / n as f64; n]);
            }
        }
    }

    /// Smallest distance of any recorded value from a non-differentiable
    /// point (relu kinks, min/max ties, clamp bounds). Gradient checks use
    /// this to skip configurations where a finite-difference step could
    /// cross a kink.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margins_by_op()
            .into_iter()
            .map(|(_, m)| m)
            .fold(f64::INFINITY, f64::min)
    }

    /// Per-op-kind kink margins, for gradient-check diagnostics.
    pub fn kink_margins_by_op(&self) -> Vec<(&'static str, f64)> {
        let mut relu = f64::INFINITY;
        let mut pair = f64::INFINITY;
        let mut clamp_m = f64::INFINITY;
        let mut reduce_m = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu => {
                    for &x in self.value(node.inputs[0]).values() {
                        relu = relu.min(x.abs());
                    }
                }
                Op::PairMin | Op::PairMax => {
                    let av = self.value(node.inputs[0]).values();
                    let bv = self.value(node.inputs[1]).values();
                    for (a, b) in av.iter().zip(bv) {
                        pair = pair.min((a - b).abs());
                    }
                }
                Op::Clamp { lo, hi } => {
                    for &x in self.value(node.inputs[0]).values() {
                        if lo.is_finite() {
                            clamp_m = clamp_m.min((x - lo).abs());
                        }
                        if hi.is_finite() {
                            clamp_m = clamp_m.min((x - hi).abs());
                        }
                    }
                }
                Op::Reduce { axis, kind } if matches!(kind, ReduceKind::Min | ReduceKind::Max) => {
                    let shape = self.value(node.inputs[0]).shape().to_vec();
                    let (outer, mid, inner) = split_axis(&shape, *axis);
                    if mid < 2 {
                        continue;
                    }
                    let v = self.value(node.inputs[0]).values();
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * mid * inner + i;
                            let mut best = f64::INFINITY;
                            let mut second = f64::INFINITY;
                            for m in 0..mid {
                                let x = match kind {
                                    ReduceKind::Min => v[base + m * inner],
                                    _ => -v[base + m * inner],
                                };
                                if x < best {
                                    second = best;
                                    best = x;
                                } else if x < second {
                                    second = x;
                                }
                            }
                            reduce_m = reduce_m.min(second - best);
                        }
                    }
                }
                _ => {}
            }
        }
        vec![
            ("relu", relu),
            ("pair-pool", pair),
            ("clamp", clamp_m),
            ("reduce-minmax", reduce_m),
        ]
    }
}

impl Tensor {
    fn scalar_unchecked(v: f64) -> Tensor {
        Tensor::from_parts(vec![1], vec![v])
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

/// Decompose a shape around `axis` into (outer, mid, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, mid, inner)
}
