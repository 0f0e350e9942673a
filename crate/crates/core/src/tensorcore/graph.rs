//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its output value; [`Graph::backward`] replays the tape in reverse from a
//! scalar root, accumulating gradients for every node that requires them.
//! Values are immutable once created and gradient accumulation for one graph
//! is single-threaded; parallelism lives inside individual kernels, where
//! each output element has a fixed accumulation order so results are
//! bit-identical regardless of thread count.

use rayon::prelude::*;

use crate::error::TensorError;
use crate::rng::Rng;
use crate::tensor::{
    col2im_t, gemm, im2col_t, strides_of, tap_dw, tap_gemm_acc, transpose2d, ConvDims, Element,
    Tensor,
};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub usize);

/// Mode switch for operations that behave differently while training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics produced by a train-mode batch norm, for running-stat
/// updates owned by the caller.
#[derive(Clone, Debug)]
pub struct BnBatchStats<T: Element> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Clone, Debug)]
enum Op<T: Element> {
    Leaf,
    Conv2d { dims: ConvDims },
    Conv1dRows,
    Linear { rows: usize },
    BatchNorm { xhat: Tensor<T>, inv_std: Vec<T>, train: bool },
    LayerNorm { xhat: Tensor<T>, inv_std: Vec<T> },
    Softmax { axis: usize },
    Gelu,
    Sigmoid,
    Add,
    Sub,
    Mul,
    Div,
    AddScalar,
    MulScalar { c: T },
    PowScalar { e: T },
    Ln,
    Sqrt,
    Huber,
    Clamp { lo: T, hi: T },
    MatMul { m: usize, k: usize, n: usize, batch: usize },
    TransposeLast2,
    Permute { perm: Vec<usize> },
    Reshape,
    Concat { axis: usize },
    Narrow { axis: usize, start: usize },
    ReduceSum { axes: Vec<usize>, mean: bool },
    Dropout { mask: Tensor<T> },
    Expand,
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    inputs: Vec<NodeId>,
    requires_grad: bool,
    tag: String,
}

/// Recorded computation for one forward pass.
pub struct Graph<T: Element> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Gradient accumulated by the last `backward`, if the node required one.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn op_tag(&self, id: NodeId) -> &str {
        &self.nodes[id.0].tag
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool, tag: &str) -> NodeId {
        self.push(value, Op::Leaf, vec![], requires_grad, tag.to_string())
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, vec![], false, "const".to_string())
    }

    pub fn constant_scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(T::from_f64(value)))
    }

    fn push(
        &mut self,
        value: Tensor<T>,
        op: Op<T>,
        inputs: Vec<NodeId>,
        requires_grad: bool,
        tag: String,
    ) -> NodeId {
        self.nodes.push(Node { value, op, inputs, requires_grad, tag });
        NodeId(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: Vec<NodeId>, tag: &str) -> NodeId {
        let requires = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.push(value, op, inputs, requires, tag.to_string())
    }

    // ── convolution and linear maps ─────────────────────────────────────

    /// 2-D cross-correlation: input `[B,Cin,H,W]`, weight `[Cout,Cin,kh,kw]`,
    /// bias `[Cout]`, zero padding.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, TensorError> {
        let dims = ConvDims::compute(self.shape(input), self.shape(weight), stride, padding)?;
        if self.shape(bias) != [dims.c_out] {
            return Err(TensorError::Shape {
                op: "conv2d".into(),
                detail: format!(
                    "bias axis 0 is {:?}, expected [{}] to match weight axis 0",
                    self.shape(bias),
                    dims.c_out
                ),
            });
        }
        let value = if stride == 1 {
            conv2d_direct_forward(self.value(input).data(), self.value(weight).data(), self.value(bias).data(), &dims)?
        } else {
            // out_t[Cout, B*OH*OW] = W[Cout, K] x col_t[K, B*OH*OW]
            let col_t = im2col_t(self.value(input).data(), &dims);
            let k = dims.col_cols();
            let m = dims.col_rows();
            let out_t = gemm(self.value(weight).data(), &col_t, dims.c_out, k, m);
            let bias_v = self.value(bias).data();
            let ohw = dims.oh * dims.ow;
            let mut out = vec![T::ZERO; dims.batch * dims.c_out * ohw];
            for b in 0..dims.batch {
                for co in 0..dims.c_out {
                    let src = &out_t[co * m + b * ohw..co * m + (b + 1) * ohw];
                    let dst = &mut out[(b * dims.c_out + co) * ohw..(b * dims.c_out + co + 1) * ohw];
                    let bv = bias_v[co];
                    for (d, &s) in dst.iter_mut().zip(src.iter()) {
                        *d = s + bv;
                    }
                }
            }
            Tensor::new(out, &[dims.batch, dims.c_out, dims.oh, dims.ow])?
        };
        Ok(self.push_op(value, Op::Conv2d { dims }, vec![input, weight, bias], "conv2d"))
    }

    /// 1-D cross-correlation along the last axis of a `[B,C]` descriptor with
    /// an odd-length kernel, zero padding, scalar bias. Used by channel
    /// attention.
    pub fn conv1d_rows(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, TensorError> {
        let ishape = self.shape(input).to_vec();
        let wshape = self.shape(weight).to_vec();
        if ishape.len() != 2 || wshape.len() != 1 || wshape[0] % 2 == 0 {
            return Err(TensorError::Shape {
                op: "conv1d_rows".into(),
                detail: format!("expected input [B,C] and odd kernel [k], got {ishape:?} and {wshape:?}"),
            });
        }
        if self.shape(bias) != [1] {
            return Err(TensorError::Shape {
                op: "conv1d_rows".into(),
                detail: format!("bias must be a scalar [1], got {:?}", self.shape(bias)),
            });
        }
        let (b, c) = (ishape[0], ishape[1]);
        let k = wshape[0];
        let off = (k / 2) as isize;
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let bias_v = self.value(bias).item();
        let mut out = vec![T::ZERO; b * c];
        for bi in 0..b {
            for ci in 0..c {
                let mut acc = bias_v;
                for (j, &wj) in w.iter().enumerate() {
                    let src = ci as isize + j as isize - off;
                    if src >= 0 && (src as usize) < c {
                        acc = wj.mul_add(x[bi * c + src as usize], acc);
                    }
                }
                out[bi * c + ci] = acc;
            }
        }
        let value = Tensor::new(out, &[b, c])?;
        Ok(self.push_op(value, Op::Conv1dRows, vec![input, weight, bias], "conv1d_rows"))
    }

    /// Affine map on the last axis: input `[..., din]`, weight `[dout, din]`,
    /// bias `[dout]`.
    pub fn linear(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, TensorError> {
        let ishape = self.shape(input).to_vec();
        let wshape = self.shape(weight).to_vec();
        let bshape = self.shape(bias).to_vec();
        if ishape.is_empty() || wshape.len() != 2 {
            return Err(TensorError::Shape {
                op: "linear".into(),
                detail: format!("expected input [..., din] and weight [dout, din], got {ishape:?} and {wshape:?}"),
            });
        }
        let din = *ishape.last().unwrap();
        let (dout, wdin) = (wshape[0], wshape[1]);
        if din != wdin {
            return Err(TensorError::Shape {
                op: "linear".into(),
                detail: format!("input last axis {din} != weight axis 1 {wdin}"),
            });
        }
        if bshape != [dout] {
            return Err(TensorError::Shape {
                op: "linear".into(),
                detail: format!("bias {bshape:?} != [dout={dout}] from weight axis 0"),
            });
        }
        let rows = self.value(input).numel() / din;
        let wt = transpose2d(self.value(weight).data(), dout, din);
        let mut out = gemm(self.value(input).data(), &wt, rows, din, dout);
        let bias_v = self.value(bias).data();
        for row in out.chunks_mut(dout) {
            for (o, &bv) in row.iter_mut().zip(bias_v.iter()) {
                *o = *o + bv;
            }
        }
        let mut oshape = ishape.clone();
        *oshape.last_mut().unwrap() = dout;
        let value = Tensor::new(out, &oshape)?;
        Ok(self.push_op(value, Op::Linear { rows }, vec![input, weight, bias], "linear"))
    }

    // ── normalization ───────────────────────────────────────────────────

    /// Batch normalization over `[B,C,H,W]` with per-channel gain/shift.
    ///
    /// In train mode the batch statistics normalize and are returned so the
    /// caller can maintain running statistics; in eval mode the provided
    /// running statistics are used and the map is affine in the input.
    pub fn batch_norm2d(
        &mut self,
        input: NodeId,
        gain: NodeId,
        shift: NodeId,
        eps: f64,
        mode: Mode,
        running: Option<(&[T], &[T])>,
    ) -> Result<(NodeId, Option<BnBatchStats<T>>), TensorError> {
        let ishape = self.shape(input).to_vec();
        if ishape.len() != 4 {
            return Err(TensorError::Shape {
                op: "batch_norm2d".into(),
                detail: format!("expected [B,C,H,W], got {ishape:?}"),
            });
        }
        let (b, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
        if self.shape(gain) != [c] || self.shape(shift) != [c] {
            return Err(TensorError::Shape {
                op: "batch_norm2d".into(),
                detail: format!(
                    "gain {:?} and shift {:?} must both be [C={c}]",
                    self.shape(gain),
                    self.shape(shift)
                ),
            });
        }
        let n = b * h * w;
        let hw = h * w;
        let x = self.value(input).data();
        let eps_t = T::from_f64(eps);

        let (mean, var, train) = match (mode, running) {
            (Mode::Train, _) => {
                let mut mean = vec![T::ZERO; c];
                let mut var = vec![T::ZERO; c];
                for ci in 0..c {
                    let mut s = T::ZERO;
                    for bi in 0..b {
                        let base = (bi * c + ci) * hw;
                        s += crate::tensor::sum(&x[base..base + hw]);
                    }
                    let m = s / T::from_f64(n as f64);
                    let mut sq = T::ZERO;
                    for bi in 0..b {
                        let base = (bi * c + ci) * hw;
                        sq += crate::tensor::sum_sq_dev(&x[base..base + hw], m);
                    }
                    mean[ci] = m;
                    var[ci] = sq / T::from_f64(n as f64);
                }
                (mean, var, true)
            }
            (Mode::Eval, Some((rm, rv))) => (rm.to_vec(), rv.to_vec(), false),
            (Mode::Eval, None) => {
                return Err(TensorError::Input {
                    op: "batch_norm2d".into(),
                    detail: "eval mode requires running statistics".into(),
                })
            }
        };

        let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps_t).sqrt()).collect();
        let g = self.value(gain).data();
        let s = self.value(shift).data();
        let mut xhat = vec![T::ZERO; x.len()];
        let mut out = vec![T::ZERO; x.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                let (m, istd, gc, sc) = (mean[ci], inv_std[ci], g[ci], s[ci]);
                for i in base..base + hw {
                    let xh = (x[i] - m) * istd;
                    xhat[i] = xh;
                    out[i] = gc.mul_add(xh, sc);
                }
            }
        }
        let stats = if train { Some(BnBatchStats { mean, var }) } else { None };
        let value = Tensor::new(out, &ishape)?;
        let xhat = Tensor::new(xhat, &ishape)?;
        let id = self.push_op(
            value,
            Op::BatchNorm { xhat, inv_std, train },
            vec![input, gain, shift],
            "batch_norm2d",
        );
        Ok((id, stats))
    }

    /// Layer normalization over the last axis with gain/shift of length `d`.
    pub fn layer_norm(
        &mut self,
        input: NodeId,
        gain: NodeId,
        shift: NodeId,
        eps: f64,
    ) -> Result<NodeId, TensorError> {
        let ishape = self.shape(input).to_vec();
        let d = *ishape.last().ok_or_else(|| TensorError::Shape {
            op: "layer_norm".into(),
            detail: "input must have at least one axis".into(),
        })?;
        if self.shape(gain) != [d] || self.shape(shift) != [d] {
            return Err(TensorError::Shape {
                op: "layer_norm".into(),
                detail: format!(
                    "gain {:?} and shift {:?} must both be [d={d}] (input last axis)",
                    self.shape(gain),
                    self.shape(shift)
                ),
            });
        }
        let rows = self.value(input).numel() / d;
        let x = self.value(input).data();
        let g = self.value(gain).data();
        let s = self.value(shift).data();
        let eps_t = T::from_f64(eps);
        let dt = T::from_f64(d as f64);
        let mut xhat = vec![T::ZERO; x.len()];
        let mut out = vec![T::ZERO; x.len()];
        let mut inv_std = vec![T::ZERO; rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mut mean = T::ZERO;
            for &v in row {
                mean += v;
            }
            mean = mean / dt;
            let mut var = T::ZERO;
            for &v in row {
                let dv = v - mean;
                var = dv.mul_add(dv, var);
            }
            var = var / dt;
            let istd = T::ONE / (var + eps_t).sqrt();
            inv_std[r] = istd;
            for i in 0..d {
                let xh = (row[i] - mean) * istd;
                xhat[r * d + i] = xh;
                out[r * d + i] = g[i].mul_add(xh, s[i]);
            }
        }
        let value = Tensor::new(out, &ishape)?;
        let xhat = Tensor::new(xhat, &ishape)?;
        Ok(self.push_op(value, Op::LayerNorm { xhat, inv_std }, vec![input, gain, shift], "layer_norm"))
    }

    // ── activations and elementwise maps ────────────────────────────────

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, input: NodeId, axis: usize) -> Result<NodeId, TensorError> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Shape {
                op: "softmax".into(),
                detail: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let x = self.value(input).data();
        let mut out = vec![T::ZERO; x.len()];
        for_each_lane(&shape, axis, |offset, stride, d| {
            let mut max = x[offset];
            for j in 1..d {
                let v = x[offset + j * stride];
                if v > max {
                    max = v;
                }
            }
            let mut sum = T::ZERO;
            for j in 0..d {
                let e = (x[offset + j * stride] - max).exp();
                out[offset + j * stride] = e;
                sum += e;
            }
            for j in 0..d {
                out[offset + j * stride] = out[offset + j * stride] / sum;
            }
        });
        let value = Tensor::new(out, &shape)?;
        Ok(self.push_op(value, Op::Softmax { axis }, vec![input], "softmax"))
    }

    /// GELU, tanh approximation:
    /// `0.5·x·(1 + tanh(sqrt(2/pi)·(x + 0.044715·x^3)))`.
    pub fn gelu(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(gelu_scalar);
        self.push_op(value, Op::Gelu, vec![input], "gelu")
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(sigmoid_scalar);
        self.push_op(value, Op::Sigmoid, vec![input], "sigmoid")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = bcast_binary(self.value(a), self.value(b), "add", |x, y| x + y)?;
        Ok(self.push_op(value, Op::Add, vec![a, b], "add"))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = bcast_binary(self.value(a), self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push_op(value, Op::Sub, vec![a, b], "sub"))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = bcast_binary(self.value(a), self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push_op(value, Op::Mul, vec![a, b], "mul"))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let value = bcast_binary(self.value(a), self.value(b), "div", |x, y| x / y)?;
        Ok(self.push_op(value, Op::Div, vec![a, b], "div"))
    }

    pub fn add_scalar(&mut self, input: NodeId, c: f64) -> NodeId {
        let ct = T::from_f64(c);
        let value = self.value(input).map(|x| x + ct);
        self.push_op(value, Op::AddScalar, vec![input], "add_scalar")
    }

    pub fn mul_scalar(&mut self, input: NodeId, c: f64) -> NodeId {
        let ct = T::from_f64(c);
        let value = self.value(input).map(|x| x * ct);
        self.push_op(value, Op::MulScalar { c: ct }, vec![input], "mul_scalar")
    }

    /// Elementwise `x^e` for a fixed exponent; defined for non-negative `x`.
    pub fn pow_scalar(&mut self, input: NodeId, e: f64) -> NodeId {
        let et = T::from_f64(e);
        let value = self.value(input).map(|x| x.powf(et));
        self.push_op(value, Op::PowScalar { e: et }, vec![input], "pow_scalar")
    }

    pub fn ln(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(|x| x.ln());
        self.push_op(value, Op::Ln, vec![input], "ln")
    }

    pub fn sqrt(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(|x| x.sqrt());
        self.push_op(value, Op::Sqrt, vec![input], "sqrt")
    }

    /// Elementwise smooth-L1 kernel with transition point 1:
    /// `0.5·x^2` for `|x| <= 1`, `|x| - 0.5` beyond.
    pub fn huber(&mut self, input: NodeId) -> NodeId {
        let half = T::from_f64(0.5);
        let value = self.value(input).map(|x| {
            let a = x.abs();
            if a <= T::ONE {
                half * x * x
            } else {
                a - half
            }
        });
        self.push_op(value, Op::Huber, vec![input], "huber")
    }

    /// Clamp to `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, input: NodeId, lo: f64, hi: f64) -> NodeId {
        let lo_t = T::from_f64(lo);
        let hi_t = T::from_f64(hi);
        let value = self.value(input).map(|x| x.maximum(lo_t).minimum(hi_t));
        self.push_op(value, Op::Clamp { lo: lo_t, hi: hi_t }, vec![input], "clamp")
    }

    // ── matrix products and shape plumbing ──────────────────────────────

    /// Batched matrix product `[..., m, k] x [..., k, n]` with identical
    /// leading axes.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let ashape = self.shape(a).to_vec();
        let bshape = self.shape(b).to_vec();
        if ashape.len() < 2 || bshape.len() != ashape.len() || ashape[..ashape.len() - 2] != bshape[..bshape.len() - 2]
        {
            return Err(TensorError::Shape {
                op: "matmul".into(),
                detail: format!("leading axes must match: {ashape:?} x {bshape:?}"),
            });
        }
        let (m, k) = (ashape[ashape.len() - 2], ashape[ashape.len() - 1]);
        let (kb, n) = (bshape[bshape.len() - 2], bshape[bshape.len() - 1]);
        if k != kb {
            return Err(TensorError::Shape {
                op: "matmul".into(),
                detail: format!("inner axes differ: lhs last axis {k}, rhs axis {} is {kb}", bshape.len() - 2),
            });
        }
        let batch: usize = ashape[..ashape.len() - 2].iter().product();
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![T::ZERO; batch * m * n];
        if batch > 1 && batch * m * k * n >= (1 << 18) {
            out.par_chunks_mut(m * n).enumerate().for_each(|(i, chunk)| {
                let c = gemm(&av[i * m * k..(i + 1) * m * k], &bv[i * k * n..(i + 1) * k * n], m, k, n);
                chunk.copy_from_slice(&c);
            });
        } else {
            for i in 0..batch {
                let c = gemm(&av[i * m * k..(i + 1) * m * k], &bv[i * k * n..(i + 1) * k * n], m, k, n);
                out[i * m * n..(i + 1) * m * n].copy_from_slice(&c);
            }
        }
        let mut oshape = ashape[..ashape.len() - 2].to_vec();
        oshape.push(m);
        oshape.push(n);
        let value = Tensor::new(out, &oshape)?;
        Ok(self.push_op(value, Op::MatMul { m, k, n, batch }, vec![a, b], "matmul"))
    }

    /// Swap the last two axes (copying).
    pub fn transpose_last2(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::Shape {
                op: "transpose_last2".into(),
                detail: format!("need at least 2 axes, got {shape:?}"),
            });
        }
        let value = transpose_last2_tensor(self.value(input));
        Ok(self.push_op(value, Op::TransposeLast2, vec![input], "transpose_last2"))
    }

    /// Arbitrary axis permutation (copying).
    pub fn permute(&mut self, input: NodeId, perm: &[usize]) -> Result<NodeId, TensorError> {
        let shape = self.shape(input).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(TensorError::Shape {
                op: "permute".into(),
                detail: format!("{perm:?} is not a permutation of axes of {shape:?}"),
            });
        }
        let value = permute_tensor(self.value(input), perm);
        Ok(self.push_op(value, Op::Permute { perm: perm.to_vec() }, vec![input], "permute"))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId, TensorError> {
        let value = self.value(input).reshaped(shape)?;
        Ok(self.push_op(value, Op::Reshape, vec![input], "reshape"))
    }

    /// Concatenate along `axis`; all other axes must agree.
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId, TensorError> {
        if inputs.is_empty() {
            return Err(TensorError::Input { op: "concat".into(), detail: "no inputs".into() });
        }
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            return Err(TensorError::Shape {
                op: "concat".into(),
                detail: format!("axis {axis} out of range for {first:?}"),
            });
        }
        let mut axis_total = 0usize;
        for &id in inputs {
            let s = self.shape(id);
            if s.len() != first.len()
                || s.iter().zip(first.iter()).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(TensorError::Shape {
                    op: "concat".into(),
                    detail: format!("shape {s:?} incompatible with {first:?} along axis {axis}"),
                });
            }
            axis_total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut oshape = first.clone();
        oshape[axis] = axis_total;
        let mut out = vec![T::ZERO; outer * axis_total * inner];
        let mut offset = 0usize;
        for &id in inputs {
            let s_axis = self.shape(id)[axis];
            let data = self.value(id).data();
            for o in 0..outer {
                let dst = (o * axis_total + offset) * inner;
                let src = o * s_axis * inner;
                out[dst..dst + s_axis * inner].copy_from_slice(&data[src..src + s_axis * inner]);
            }
            offset += s_axis;
        }
        let value = Tensor::new(out, &oshape)?;
        Ok(self.push_op(value, Op::Concat { axis }, inputs.to_vec(), "concat"))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, input: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId, TensorError> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::Shape {
                op: "narrow".into(),
                detail: format!("range {start}..{} out of bounds for axis {axis} of {shape:?}", start + len),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let data = self.value(input).data();
        let mut out = vec![T::ZERO; outer * len * inner];
        for o in 0..outer {
            let src = (o * shape[axis] + start) * inner;
            out[o * len * inner..(o + 1) * len * inner].copy_from_slice(&data[src..src + len * inner]);
        }
        let mut oshape = shape.clone();
        oshape[axis] = len;
        let value = Tensor::new(out, &oshape)?;
        Ok(self.push_op(value, Op::Narrow { axis, start }, vec![input], "narrow"))
    }

    /// Sum over `axes` (kept as size-1 axes). Reducing every axis yields `[1]`.
    pub fn sum_axes(&mut self, input: NodeId, axes: &[usize]) -> Result<NodeId, TensorError> {
        self.reduce(input, axes, false)
    }

    /// Mean over `axes` (kept as size-1 axes). Reducing every axis yields `[1]`.
    pub fn mean_axes(&mut self, input: NodeId, axes: &[usize]) -> Result<NodeId, TensorError> {
        self.reduce(input, axes, true)
    }

    pub fn mean_all(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let rank = self.shape(input).len();
        let axes: Vec<usize> = (0..rank).collect();
        self.reduce(input, &axes, true)
    }

    pub fn sum_all(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let rank = self.shape(input).len();
        let axes: Vec<usize> = (0..rank).collect();
        self.reduce(input, &axes, false)
    }

    fn reduce(&mut self, input: NodeId, axes: &[usize], mean: bool) -> Result<NodeId, TensorError> {
        let shape = self.shape(input).to_vec();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if axes.iter().any(|&a| a >= shape.len()) {
            return Err(TensorError::Shape {
                op: "reduce".into(),
                detail: format!("axes {axes:?} out of range for {shape:?}"),
            });
        }
        let mut oshape = shape.clone();
        for &a in &axes {
            oshape[a] = 1;
        }
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        let x = self.value(input).data();
        let out_full: usize = oshape.iter().product();
        let mut out = vec![T::ZERO; out_full];
        let in_strides = strides_of(&shape);
        let out_strides = strides_of(&oshape);
        for (i, &v) in x.iter().enumerate() {
            out[collapse_index(i, &shape, &in_strides, &oshape, &out_strides)] += v;
        }
        if mean {
            let c = T::from_f64(count as f64);
            for v in &mut out {
                *v = *v / c;
            }
        }
        let final_shape = if axes.len() == shape.len() { vec![1] } else { oshape.clone() };
        let value = Tensor::new(out, &final_shape)?;
        Ok(self.push_op(value, Op::ReduceSum { axes, mean }, vec![input], if mean { "mean" } else { "sum" }))
    }

    /// Inverted dropout: keeps elements with probability `1-p` scaled by
    /// `1/(1-p)` in train mode; identity in eval mode.
    pub fn dropout(&mut self, input: NodeId, p: f64, mode: Mode, rng: &mut Rng) -> Result<NodeId, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Input {
                op: "dropout".into(),
                detail: format!("p must be in [0,1), got {p}"),
            });
        }
        if mode == Mode::Eval || p == 0.0 {
            let value = self.value(input).clone();
            let mask = Tensor::full(self.shape(input), T::ONE);
            return Ok(self.push_op(value, Op::Dropout { mask }, vec![input], "dropout"));
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let shape = self.shape(input).to_vec();
        let mask_data: Vec<T> =
            (0..self.value(input).numel()).map(|_| if rng.bernoulli(p) { T::ZERO } else { keep }).collect();
        let mask = Tensor::new(mask_data, &shape)?;
        let x = self.value(input).data();
        let out: Vec<T> = x.iter().zip(mask.data().iter()).map(|(&a, &m)| a * m).collect();
        let value = Tensor::new(out, &shape)?;
        Ok(self.push_op(value, Op::Dropout { mask }, vec![input], "dropout"))
    }

    /// Broadcast to `target` shape (size-1 axes and missing leading axes).
    pub fn expand(&mut self, input: NodeId, target: &[usize]) -> Result<NodeId, TensorError> {
        let value = broadcast_to(self.value(input), target).ok_or_else(|| TensorError::Shape {
            op: "expand".into(),
            detail: format!("cannot broadcast {:?} to {target:?}", self.shape(input)),
        })?;
        Ok(self.push_op(value, Op::Expand, vec![input], "expand"))
    }

    // ── attention (composite) ───────────────────────────────────────────

    /// Scaled dot-product attention per head:
    /// `softmax(q·k^T / sqrt(dh)) · v`, shapes `[B,h,T,dh]`.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId, TensorError> {
        let qs = self.shape(q).to_vec();
        if qs.len() != 4 || self.shape(k) != qs.as_slice() || self.shape(v) != qs.as_slice() {
            return Err(TensorError::Shape {
                op: "attention".into(),
                detail: format!(
                    "q, k, v must share shape [B,h,T,dh]: q {:?}, k {:?}, v {:?}",
                    qs,
                    self.shape(k),
                    self.shape(v)
                ),
            });
        }
        let dh = qs[3];
        if dh == 0 {
            return Err(TensorError::Shape { op: "attention".into(), detail: "head axis must be >= 1".into() });
        }
        let kt = self.transpose_last2(k)?;
        let scores = self.matmul(q, kt)?;
        let scaled = self.mul_scalar(scores, 1.0 / (dh as f64).sqrt());
        let attn = self.softmax(scaled, 3)?;
        self.matmul(attn, v)
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse pass from a scalar root; gradients become readable through
    /// [`Graph::grad`]. Every reachable gradient is checked finite.
    pub fn backward(&mut self, root: NodeId) -> Result<(), TensorError> {
        if self.value(root).numel() != 1 {
            return Err(TensorError::Input {
                op: "backward".into(),
                detail: format!("root must be scalar, got shape {:?}", self.shape(root)),
            });
        }
        let n = self.nodes.len();
        let mut needed = vec![false; n];
        let mut stack = vec![root.0];
        while let Some(i) = stack.pop() {
            if needed[i] || !self.nodes[i].requires_grad {
                continue;
            }
            needed[i] = true;
            for inp in &self.nodes[i].inputs {
                stack.push(inp.0);
            }
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        if !needed[root.0] {
            // Root does not depend on any differentiable leaf.
            self.grads = grads;
            return Ok(());
        }
        grads[root.0] = Some(Tensor::full(self.shape(root), T::ONE));

        for i in (0..=root.0).rev() {
            if !needed[i] {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.backprop_node(i, &gout, &mut grads)?;
            grads[i] = Some(gout);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(TensorError::NonFinite { block: format!("gradient of {}", self.nodes[i].tag) });
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], target: NodeId, delta: Tensor<T>) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(g) => g.add_assign_tensor(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop_node(
        &self,
        i: usize,
        gout: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<(), TensorError> {
        let node = &self.nodes[i];
        let inputs = node.inputs.clone();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { dims } => {
                let (input, weight, _bias) = (inputs[0], inputs[1], inputs[2]);
                let m = dims.col_rows();
                let k = dims.col_cols();
                let ohw = dims.oh * dims.ow;
                let g = gout.data();
                if self.nodes[inputs[2].0].requires_grad {
                    let mut gb = vec![T::ZERO; dims.c_out];
                    for b in 0..dims.batch {
                        for (co, acc) in gb.iter_mut().enumerate() {
                            let base = (b * dims.c_out + co) * ohw;
                            *acc += crate::tensor::sum(&g[base..base + ohw]);
                        }
                    }
                    self.accumulate(grads, inputs[2], Tensor::new(gb, &[dims.c_out])?);
                }
                let need_w = self.nodes[weight.0].requires_grad;
                let need_x = self.nodes[input.0].requires_grad;
                if (need_w || need_x) && dims.stride == 1 {
                    let (gw, gx) = conv2d_direct_backward(
                        g,
                        self.value(input).data(),
                        self.value(weight).data(),
                        dims,
                        need_w,
                        need_x,
                    );
                    if let Some(gw) = gw {
                        self.accumulate(
                            grads,
                            weight,
                            Tensor::new(gw, &[dims.c_out, dims.c_in, dims.kh, dims.kw])?,
                        );
                    }
                    if let Some(gx) = gx {
                        self.accumulate(
                            grads,
                            input,
                            Tensor::new(gx, &[dims.batch, dims.c_in, dims.h, dims.w])?,
                        );
                    }
                } else if need_w || need_x {
                    // g_t[Cout, M]: gradient rows regrouped per filter.
                    let mut g_t = vec![T::ZERO; dims.c_out * m];
                    for b in 0..dims.batch {
                        for co in 0..dims.c_out {
                            let base = (b * dims.c_out + co) * ohw;
                            g_t[co * m + b * ohw..co * m + (b + 1) * ohw]
                                .copy_from_slice(&g[base..base + ohw]);
                        }
                    }
                    if need_w {
                        // dW^T[K, Cout] = col_t[K, M] x g_t^T[M, Cout]
                        let col_t = im2col_t(self.value(input).data(), dims);
                        let g_tt = transpose2d(&g_t, dims.c_out, m);
                        let gw_t = gemm(&col_t, &g_tt, k, m, dims.c_out);
                        let gw = transpose2d(&gw_t, k, dims.c_out);
                        self.accumulate(
                            grads,
                            weight,
                            Tensor::new(gw, &[dims.c_out, dims.c_in, dims.kh, dims.kw])?,
                        );
                    }
                    if need_x {
                        // dcol_t[K, M] = W^T[K, Cout] x g_t[Cout, M], folded back.
                        let wt = transpose2d(self.value(weight).data(), dims.c_out, k);
                        let gcol_t = gemm(&wt, &g_t, k, dims.c_out, m);
                        let gx = col2im_t(&gcol_t, dims);
                        self.accumulate(
                            grads,
                            input,
                            Tensor::new(gx, &[dims.batch, dims.c_in, dims.h, dims.w])?,
                        );
                    }
                }
            }
            Op::Conv1dRows => {
                let (input, weight, bias) = (inputs[0], inputs[1], inputs[2]);
                let shape = self.value(input).shape().to_vec();
                let (b, c) = (shape[0], shape[1]);
                let kw = self.value(weight).numel();
                let off = (kw / 2) as isize;
                let g = gout.data();
                let x = self.value(input).data();
                let w = self.value(weight).data();
                if self.nodes[bias.0].requires_grad {
                    let mut gb = T::ZERO;
                    for &v in g {
                        gb += v;
                    }
                    self.accumulate(grads, bias, Tensor::scalar(gb));
                }
                if self.nodes[weight.0].requires_grad {
                    let mut gw = vec![T::ZERO; kw];
                    for bi in 0..b {
                        for ci in 0..c {
                            let go = g[bi * c + ci];
                            for (j, gwj) in gw.iter_mut().enumerate() {
                                let src = ci as isize + j as isize - off;
                                if src >= 0 && (src as usize) < c {
                                    *gwj = go.mul_add(x[bi * c + src as usize], *gwj);
                                }
                            }
                        }
                    }
                    self.accumulate(grads, weight, Tensor::new(gw, &[kw])?);
                }
                if self.nodes[input.0].requires_grad {
                    let mut gx = vec![T::ZERO; b * c];
                    for bi in 0..b {
                        for ci in 0..c {
                            let go = g[bi * c + ci];
                            for (j, &wj) in w.iter().enumerate() {
                                let src = ci as isize + j as isize - off;
                                if src >= 0 && (src as usize) < c {
                                    gx[bi * c + src as usize] = go.mul_add(wj, gx[bi * c + src as usize]);
                                }
                            }
                        }
                    }
                    self.accumulate(grads, input, Tensor::new(gx, &shape)?);
                }
            }
            Op::Linear { rows } => {
                let (input, weight, bias) = (inputs[0], inputs[1], inputs[2]);
                let wshape = self.value(weight).shape().to_vec();
                let (dout, din) = (wshape[0], wshape[1]);
                let g = gout.data();
                if self.nodes[bias.0].requires_grad {
                    let mut gb = vec![T::ZERO; dout];
                    for row in g.chunks(dout) {
                        for (acc, &v) in gb.iter_mut().zip(row.iter()) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, bias, Tensor::new(gb, &[dout])?);
                }
                if self.nodes[weight.0].requires_grad {
                    let gt = transpose2d(g, *rows, dout);
                    let gw = gemm(&gt, self.value(input).data(), dout, *rows, din);
                    self.accumulate(grads, weight, Tensor::new(gw, &[dout, din])?);
                }
                if self.nodes[input.0].requires_grad {
                    let gx = gemm(g, self.value(weight).data(), *rows, dout, din);
                    self.accumulate(grads, input, Tensor::new(gx, self.value(input).shape())?);
                }
            }
            Op::BatchNorm { xhat, inv_std, train } => {
                let (input, gain, shift) = (inputs[0], inputs[1], inputs[2]);
                let shape = self.value(input).shape().to_vec();
                let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                let hw = h * w;
                let n = b * hw;
                let g = gout.data();
                let xh = xhat.data();
                let gamma = self.value(gain).data();
                if self.nodes[shift.0].requires_grad {
                    let mut gb = vec![T::ZERO; c];
                    for bi in 0..b {
                        for (ci, acc) in gb.iter_mut().enumerate() {
                            let base = (bi * c + ci) * hw;
                            *acc += crate::tensor::sum(&g[base..base + hw]);
                        }
                    }
                    self.accumulate(grads, shift, Tensor::new(gb, &[c])?);
                }
                if self.nodes[gain.0].requires_grad {
                    let mut gg = vec![T::ZERO; c];
                    for bi in 0..b {
                        for (ci, acc) in gg.iter_mut().enumerate() {
                            let base = (bi * c + ci) * hw;
                            *acc += crate::tensor::dot(&g[base..base + hw], &xh[base..base + hw]);
                        }
                    }
                    self.accumulate(grads, gain, Tensor::new(gg, &[c])?);
                }
                if self.nodes[input.0].requires_grad {
                    let mut gx = vec![T::ZERO; g.len()];
                    if *train {
                        let nt = T::from_f64(n as f64);
                        for ci in 0..c {
                            let mut sum_g = T::ZERO;
                            let mut sum_g_xhat = T::ZERO;
                            for bi in 0..b {
                                let base = (bi * c + ci) * hw;
                                sum_g += crate::tensor::sum(&g[base..base + hw]);
                                sum_g_xhat += crate::tensor::dot(&g[base..base + hw], &xh[base..base + hw]);
                            }
                            let sum_dxhat = sum_g * gamma[ci];
                            let sum_dxhat_xhat = sum_g_xhat * gamma[ci];
                            let scale = inv_std[ci] / nt;
                            for bi in 0..b {
                                let base = (bi * c + ci) * hw;
                                for i in base..base + hw {
                                    let dxh = g[i] * gamma[ci];
                                    gx[i] = scale * (nt * dxh - sum_dxhat - xh[i] * sum_dxhat_xhat);
                                }
                            }
                        }
                    } else {
                        for ci in 0..c {
                            let k = gamma[ci] * inv_std[ci];
                            for bi in 0..b {
                                let base = (bi * c + ci) * hw;
                                for i in base..base + hw {
                                    gx[i] = g[i] * k;
                                }
                            }
                        }
                    }
                    self.accumulate(grads, input, Tensor::new(gx, &shape)?);
                }
            }
            Op::LayerNorm { xhat, inv_std } => {
                let (input, gain, shift) = (inputs[0], inputs[1], inputs[2]);
                let shape = self.value(input).shape().to_vec();
                let d = *shape.last().unwrap();
                let rows = self.value(input).numel() / d;
                let g = gout.data();
                let xh = xhat.data();
                let gamma = self.value(gain).data();
                if self.nodes[shift.0].requires_grad {
                    let mut gb = vec![T::ZERO; d];
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                    self.accumulate(grads, shift, Tensor::new(gb, &[d])?);
                }
                if self.nodes[gain.0].requires_grad {
                    let mut gg = vec![T::ZERO; d];
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] = g[r * d + j].mul_add(xh[r * d + j], gg[j]);
                        }
                    }
                    self.accumulate(grads, gain, Tensor::new(gg, &[d])?);
                }
                if self.nodes[input.0].requires_grad {
                    let dt = T::from_f64(d as f64);
                    let mut gx = vec![T::ZERO; g.len()];
                    for r in 0..rows {
                        let mut sum_dxhat = T::ZERO;
                        let mut sum_dxhat_xhat = T::ZERO;
                        for j in 0..d {
                            let dxh = g[r * d + j] * gamma[j];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat = dxh.mul_add(xh[r * d + j], sum_dxhat_xhat);
                        }
                        let scale = inv_std[r] / dt;
                        for j in 0..d {
                            let dxh = g[r * d + j] * gamma[j];
                            gx[r * d + j] = scale * (dt * dxh - sum_dxhat - xh[r * d + j] * sum_dxhat_xhat);
                        }
                    }
                    self.accumulate(grads, input, Tensor::new(gx, &shape)?);
                }
            }
            Op::Softmax { axis } => {
                let input = inputs[0];
                if self.nodes[input.0].requires_grad {
                    let shape = self.value(input).shape().to_vec();
                    let s = self.nodes[i].value.data();
                    let g = gout.data();
                    let mut gx = vec![T::ZERO; g.len()];
                    for_each_lane(&shape, *axis, |offset, stride, d| {
                        let mut dot = T::ZERO;
                        for j in 0..d {
                            let idx = offset + j * stride;
                            dot = g[idx].mul_add(s[idx], dot);
                        }
                        for j in 0..d {
                            let idx = offset + j * stride;
                            gx[idx] = s[idx] * (g[idx] - dot);
                        }
                    });
                    self.accumulate(grads, input, Tensor::new(gx, &shape)?);
                }
            }
            Op::Gelu => {
                let input = inputs[0];
                if self.nodes[input.0].requires_grad {
                    let x = self.value(input).data();
                    let gx: Vec<T> =
                        x.iter().zip(gout.data().iter()).map(|(&xi, &gi)| gi * gelu_grad_scalar(xi)).collect();
                    self.accumulate(grads, input, Tensor::new(gx, self.value(input).shape())?);
                }
            }
            Op::Sigmoid => {
                let input = inputs[0];
                if self.nodes[input.0].requires_grad {
                    let y = self.nodes[i].value.data();
                    let gx: Vec<T> =
                        y.iter().zip(gout.data().iter()).map(|(&yi, &gi)| gi * yi * (T::ONE - yi)).collect();
                    self.accumulate(grads, input, Tensor::new(gx, self.value(input).shape())?);
                }
            }
            Op::Add => {
                let (a, b) = (inputs[0], inputs[1]);
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, a, reduce_to_shape(gout, self.value(a).shape()));
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, b, reduce_to_shape(gout, self.value(b).shape()));
                }
            }
            Op::Sub => {
                let (a, b) = (inputs[0], inputs[1]);
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, a, reduce_to_shape(gout, self.value(a).shape()));
                }
                if self.nodes[b.0].requires_grad {
                    let neg = gout.map(|x| -x);
                    self.accumulate(grads, b, reduce_to_shape(&neg, self.value(b).shape()));
                }
            }
            Op::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                if self.nodes[a.0].requires_grad {
                    let t = bcast_binary(gout, self.value(b), "mul-grad", |x, y| x * y)?;
                    self.accumulate(grads, a, reduce_to_shape(&t, self.value(a).shape()));
                }
                if self.nodes[b.0].requires_grad {
                    let t = bcast_binary(gout, self.value(a), "mul-grad", |x, y| x * y)?;
                    self.accumulate(grads, b, reduce_to_shape(&t, self.value(b).shape()));
                }
            }
            Op::Div => {
                let (a, b) = (inputs[0], inputs[1]);
                if self.nodes[a.0].requires_grad {
                    let t = bcast_binary(gout, self.value(b), "div-grad", |g, y| g / y)?;
                    self.accumulate(grads, a, reduce_to_shape(&t, self.value(a).shape()));
                }
                if self.nodes[b.0].requires_grad {
                    let quot = bcast_binary(self.value(a), self.value(b), "div-grad", |x, y| x / (y * y))?;
                    let t = bcast_binary(gout, &quot, "div-grad", |g, q| -(g * q))?;
                    self.accumulate(grads, b, reduce_to_shape(&t, self.value(b).shape()));
                }
            }
            Op::AddScalar => {
                let input = inputs[0];
                if self.nodes[input.0].requires_grad {
                    self.accumulate(grads, input, gout.clone());
                }
            }
            Op::MulScalar { c } => {
                let input = inputs[0];
                if self.nodes[input.0].requires_grad {
                    let c = *c;
                    self.accumulate(grads, input, gout.map(|g| g * c));
                }
            }
            Op::PowScalar { e } => {
                let input = inputs[0];
                if self.nodes[input.0].requires_grad {
                    let e = *e;
                    let x = self.value(input).data();
                    let gx: Vec<T> = x
                        .iter()
                        .zip(gout.data().iter())
                        .map(|(&xi, &gi)| gi * e * xi.powf(e - T::ONE))
                        .collect();
                    self.accumulate(grads, input, Tensor::new(gx, self.value(input).shape())?);
                }
            }
            Op::Ln => {
                let input = inputs[0];
                if self.nodes[input.0].requires_grad {
                    let x = self.value(input).data();
                    let gx: Vec<T> = x.iter().zip(gout.data().iter()).map(|(&xi, &gi)| gi / xi).collect();
                    self.accumulate(grads, input, Tensor::new(gx, self.value(input).shape())?);
                }
            }
            Op::Sqrt => {
                let input = inputs[0];
                if self.nodes[input.0].requires_grad {
                    let y = self.nodes[i].value.data();
                    let half = T::from_f64(0.5);
                    let gx: Vec<T> = y.iter().zip(gout.data().iter()).map(|(&yi, &gi)| gi * half / yi).collect();
                    self.accumulate(grads, input, Tensor::new(gx, self.value(input).shape())?);
                }
            }
            Op::Huber => {
                let input = inputs[0];
                if self.nodes[input.0].requires_grad {
                    let x = self.value(input).data();
                    let gx: Vec<T> = x
                        .iter()
                        .zip(gout.data().iter())
                        .map(|(&xi, &gi)| {
                            let d = if xi.abs() <= T::ONE {
                                xi
                            } else if xi > T::ZERO {
                                T::ONE
                            } else {
                                -T::ONE
                            };
                            gi * d
                        })
                        .collect();
                    self.accumulate(grads, input, Tensor::new(gx, self.value(input).shape())?);
                }
            }
            Op::Clamp { lo, hi } => {
                let input = inputs[0];
                if self.nodes[input.0].requires_grad {
                    let (lo, hi) = (*lo, *hi);
                    let x = self.value(input).data();
                    let gx: Vec<T> = x
                        .iter()
                        .zip(gout.data().iter())
                        .map(|(&xi, &gi)| if xi >= lo && xi <= hi { gi } else { T::ZERO })
                        .collect();
                    self.accumulate(grads, input, Tensor::new(gx, self.value(input).shape())?);
                }
            }
            Op::MatMul { m, k, n, batch } => {
                let (a, b) = (inputs[0], inputs[1]);
                let (m, k, n, batch) = (*m, *k, *n, *batch);
                let g = gout.data();
                if self.nodes[a.0].requires_grad {
                    let bv = self.value(b).data();
                    let mut ga = vec![T::ZERO; batch * m * k];
                    for i in 0..batch {
                        let bt = transpose2d(&bv[i * k * n..(i + 1) * k * n], k, n);
                        let gi = gemm(&g[i * m * n..(i + 1) * m * n], &bt, m, n, k);
                        ga[i * m * k..(i + 1) * m * k].copy_from_slice(&gi);
                    }
                    self.accumulate(grads, a, Tensor::new(ga, self.value(a).shape())?);
                }
                if self.nodes[b.0].requires_grad {
                    let av = self.value(a).data();
                    let mut gb = vec![T::ZERO; batch * k * n];
                    for i in 0..batch {
                        let at = transpose2d(&av[i * m * k..(i + 1) * m * k], m, k);
                        let gi = gemm(&at, &g[i * m * n..(i + 1) * m * n], k, m, n);
                        gb[i * k * n..(i + 1) * k * n].copy_from_slice(&gi);
                    }
                    self.accumulate(grads, b, Tensor::new(gb, self.value(b).shape())?);
                }
            }
            Op::TransposeLast2 => {
                let input = inputs[0];
                if self.nodes[input.0].requires_grad {
                    self.accumulate(grads, input, transpose_last2_tensor(gout));
                }
            }
            Op::Permute { perm } => {
                let input = inputs[0];
                if self.nodes[input.0].requires_grad {
                    let mut inverse = vec![0usize; perm.len()];
                    for (dst, &src) in perm.iter().enumerate() {
                        inverse[src] = dst;
                    }
                    self.accumulate(grads, input, permute_tensor(gout, &inverse));
                }
            }
            Op::Reshape => {
                let input = inputs[0];
                if self.nodes[input.0].requires_grad {
                    self.accumulate(grads, input, gout.reshaped(self.value(input).shape())?);
                }
            }
            Op::Concat { axis } => {
                let oshape = self.nodes[i].value.shape().to_vec();
                let outer: usize = oshape[..*axis].iter().product();
                let inner: usize = oshape[*axis + 1..].iter().product();
                let total = oshape[*axis];
                let g = gout.data();
                let mut offset = 0usize;
                for &inp in &inputs {
                    let s_axis = self.value(inp).shape()[*axis];
                    if self.nodes[inp.0].requires_grad {
                        let mut gi = vec![T::ZERO; outer * s_axis * inner];
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            gi[o * s_axis * inner..(o + 1) * s_axis * inner]
                                .copy_from_slice(&g[src..src + s_axis * inner]);
                        }
                        self.accumulate(grads, inp, Tensor::new(gi, self.value(inp).shape())?);
                    }
                    offset += s_axis;
                }
            }
            Op::Narrow { axis, start } => {
                let input = inputs[0];
                if self.nodes[input.0].requires_grad {
                    let ishape = self.value(input).shape().to_vec();
                    let oshape = self.nodes[i].value.shape().to_vec();
                    let outer: usize = ishape[..*axis].iter().product();
                    let inner: usize = ishape[*axis + 1..].iter().product();
                    let len = oshape[*axis];
                    let g = gout.data();
                    let mut gi = vec![T::ZERO; self.value(input).numel()];
                    for o in 0..outer {
                        let dst = (o * ishape[*axis] + start) * inner;
                        gi[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                    }
                    self.accumulate(grads, input, Tensor::new(gi, &ishape)?);
                }
            }
            Op::ReduceSum { axes, mean } => {
                let input = inputs[0];
                if self.nodes[input.0].requires_grad {
                    let ishape = self.value(input).shape().to_vec();
                    let mut oshape = ishape.clone();
                    for &a in axes {
                        oshape[a] = 1;
                    }
                    let count: usize = axes.iter().map(|&a| ishape[a]).product();
                    let scale = if *mean { T::ONE / T::from_f64(count as f64) } else { T::ONE };
                    let in_strides = strides_of(&ishape);
                    let out_strides = strides_of(&oshape);
                    let g = gout.data();
                    let mut gi = vec![T::ZERO; self.value(input).numel()];
                    for (idx, gv) in gi.iter_mut().enumerate() {
                        *gv = g[collapse_index(idx, &ishape, &in_strides, &oshape, &out_strides)] * scale;
                    }
                    self.accumulate(grads, input, Tensor::new(gi, &ishape)?);
                }
            }
            Op::Dropout { mask } => {
                let input = inputs[0];
                if self.nodes[input.0].requires_grad {
                    let gx: Vec<T> =
                        gout.data().iter().zip(mask.data().iter()).map(|(&g, &m)| g * m).collect();
                    self.accumulate(grads, input, Tensor::new(gx, self.value(input).shape())?);
                }
            }
            Op::Expand => {
                let input = inputs[0];
                if self.nodes[input.0].requires_grad {
                    self.accumulate(grads, input, reduce_to_shape(gout, self.value(input).shape()));
                }
            }
        }
        Ok(())
    }
}

// ── direct stride-1 convolution ─────────────────────────────────────────
//
// For stride 1 the padded input grid and the output grid share an affine
// index map, so each kernel tap becomes one small gemm over a contiguous
// column range at a constant offset. No unfolded buffer is materialized.

/// Channel-major zero-padded copy: `[Cin, B*(H+2p)*(W+2p)]`.
fn pad_channel_major<T: Element>(input: &[T], d: &ConvDims) -> (Vec<T>, usize, usize) {
    let hp = d.h + 2 * d.padding;
    let wp = d.w + 2 * d.padding;
    let mp = d.batch * hp * wp;
    let mut out = vec![T::ZERO; d.c_in * mp];
    let hw = d.h * d.w;
    for c in 0..d.c_in {
        let plane = &mut out[c * mp..(c + 1) * mp];
        for b in 0..d.batch {
            for y in 0..d.h {
                let src = &input[(b * d.c_in + c) * hw + y * d.w..(b * d.c_in + c) * hw + (y + 1) * d.w];
                let dst = b * hp * wp + (y + d.padding) * wp + d.padding;
                plane[dst..dst + d.w].copy_from_slice(src);
            }
        }
    }
    (out, wp, mp)
}

fn conv2d_direct_forward<T: Element>(
    input: &[T],
    weight: &[T],
    bias: &[T],
    d: &ConvDims,
) -> Result<Tensor<T>, TensorError> {
    let (in_p, wp, mp) = pad_channel_major(input, d);
    let hp = d.h + 2 * d.padding;
    let mut out_p = vec![T::ZERO; d.c_out * mp];
    let taps = d.kh * d.kw;
    let mut w_tap = vec![T::ZERO; d.c_out * d.c_in];
    for t in 0..taps {
        let (ky, kx) = (t / d.kw, t % d.kw);
        for co in 0..d.c_out {
            for ci in 0..d.c_in {
                w_tap[co * d.c_in + ci] = weight[((co * d.c_in + ci) * d.kh + ky) * d.kw + kx];
            }
        }
        let delta = (ky * wp + kx) as isize;
        tap_gemm_acc(&w_tap, &in_p, &mut out_p, d.c_out, d.c_in, mp, delta);
    }
    // Crop the embedded output region and add bias.
    let ohw = d.oh * d.ow;
    let mut out = vec![T::ZERO; d.batch * d.c_out * ohw];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let bv = bias[co];
            for oy in 0..d.oh {
                let src = &out_p[co * mp + b * hp * wp + oy * wp..co * mp + b * hp * wp + oy * wp + d.ow];
                let dst = &mut out[((b * d.c_out + co) * d.oh + oy) * d.ow
                    ..((b * d.c_out + co) * d.oh + oy + 1) * d.ow];
                for (o, &s) in dst.iter_mut().zip(src.iter()) {
                    *o = s + bv;
                }
            }
        }
    }
    Tensor::new(out, &[d.batch, d.c_out, d.oh, d.ow])
}

#[allow(clippy::type_complexity)]
fn conv2d_direct_backward<T: Element>(
    gout: &[T],
    input: &[T],
    weight: &[T],
    d: &ConvDims,
    need_w: bool,
    need_x: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let hp = d.h + 2 * d.padding;
    let wp = d.w + 2 * d.padding;
    let mp = d.batch * hp * wp;
    // Scatter the output gradient onto the padded grid; garbage columns
    // stay zero so they contribute nothing.
    let mut g_p = vec![T::ZERO; d.c_out * mp];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            for oy in 0..d.oh {
                let src = &gout[((b * d.c_out + co) * d.oh + oy) * d.ow
                    ..((b * d.c_out + co) * d.oh + oy + 1) * d.ow];
                let dst = co * mp + b * hp * wp + oy * wp;
                g_p[dst..dst + d.ow].copy_from_slice(src);
            }
        }
    }
    let taps = d.kh * d.kw;
    let gw = if need_w {
        let (in_p, _, _) = pad_channel_major(input, d);
        let mut gw = vec![T::ZERO; d.c_out * d.c_in * taps];
        for t in 0..taps {
            let (ky, kx) = (t / d.kw, t % d.kw);
            let delta = (ky * wp + kx) as isize;
            let dw_tap = tap_dw(&g_p, &in_p, d.c_out, d.c_in, mp, delta);
            for co in 0..d.c_out {
                for ci in 0..d.c_in {
                    gw[((co * d.c_in + ci) * d.kh + ky) * d.kw + kx] = dw_tap[co * d.c_in + ci];
                }
            }
        }
        Some(gw)
    } else {
        None
    };
    let gx = if need_x {
        let mut gin_p = vec![T::ZERO; d.c_in * mp];
        let mut wt_tap = vec![T::ZERO; d.c_in * d.c_out];
        for t in 0..taps {
            let (ky, kx) = (t / d.kw, t % d.kw);
            for co in 0..d.c_out {
                for ci in 0..d.c_in {
                    wt_tap[ci * d.c_out + co] = weight[((co * d.c_in + ci) * d.kh + ky) * d.kw + kx];
                }
            }
            let delta = (ky * wp + kx) as isize;
            tap_gemm_acc(&wt_tap, &g_p, &mut gin_p, d.c_in, d.c_out, mp, -delta);
        }
        // Crop away the padding margin.
        let hw = d.h * d.w;
        let mut gx = vec![T::ZERO; d.batch * d.c_in * hw];
        for b in 0..d.batch {
            for ci in 0..d.c_in {
                for y in 0..d.h {
                    let src = ci * mp + b * hp * wp + (y + d.padding) * wp + d.padding;
                    let dst = (b * d.c_in + ci) * hw + y * d.w;
                    gx[dst..dst + d.w].copy_from_slice(&gin_p[src..src + d.w]);
                }
            }
        }
        Some(gx)
    } else {
        None
    };
    (gw, gx)
}

// ── scalar kernels ──────────────────────────────────────────────────────

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// tanh via one exp: `1 - 2/(e^{2x} + 1)`. Same function, measurably faster
/// than the libm tanh on the dense activation maps.
#[inline(always)]
fn fast_tanh<T: Element>(x: T) -> T {
    let two = T::from_f64(2.0);
    T::ONE - two / ((two * x).exp() + T::ONE)
}

fn gelu_scalar<T: Element>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let inner = c * (x + a * x * x * x);
    half * x * (T::ONE + fast_tanh(inner))
}

fn gelu_grad_scalar<T: Element>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let inner = c * (x + a * x * x * x);
    let t = fast_tanh(inner);
    let sech2 = T::ONE - t * t;
    half * (T::ONE + t) + half * x * sech2 * c * (T::ONE + three * a * x * x)
}

fn sigmoid_scalar<T: Element>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

// ── layout helpers ──────────────────────────────────────────────────────

/// Visit every 1-D lane along `axis`, calling `f(offset, stride, len)`.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize, usize)) {
    let d = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for o in 0..outer {
        for i in 0..inner {
            f(o * d * inner + i, inner, d);
        }
    }
}

/// Map a linear index of `shape` to the linear index of the same coordinates
/// collapsed onto `oshape` (size-1 axes absorb).
#[inline]
fn collapse_index(
    mut lin: usize,
    shape: &[usize],
    in_strides: &[usize],
    oshape: &[usize],
    out_strides: &[usize],
) -> usize {
    let mut out = 0usize;
    for d in 0..shape.len() {
        let c = lin / in_strides[d];
        lin -= c * in_strides[d];
        if oshape[d] != 1 {
            out += c * out_strides[d];
        }
    }
    out
}

fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return None;
        }
        out[i] = da.max(db);
    }
    Some(out)
}

/// Strides of `shape` aligned into an output of rank `out_rank`, with stride 0
/// on broadcast axes.
fn aligned_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let native = strides_of(shape);
    let mut out = vec![0usize; rank];
    for i in 0..shape.len() {
        out[offset + i] = if shape[i] == 1 { 0 } else { native[i] };
    }
    out
}

fn bcast_binary<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>, TensorError> {
    if a.shape() == b.shape() {
        let out: Vec<T> = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(out, a.shape());
    }
    if b.numel() == 1 {
        let y = b.data()[0];
        return Tensor::new(a.data().iter().map(|&x| f(x, y)).collect(), a.shape());
    }
    if a.numel() == 1 {
        let x = a.data()[0];
        return Tensor::new(b.data().iter().map(|&y| f(x, y)).collect(), b.shape());
    }
    let oshape = broadcast_shapes(a.shape(), b.shape()).ok_or_else(|| TensorError::Shape {
        op: op.into(),
        detail: format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()),
    })?;
    let sa = aligned_strides(a.shape(), &oshape);
    let sb = aligned_strides(b.shape(), &oshape);
    let so = strides_of(&oshape);
    let numel: usize = oshape.iter().product();
    let mut out = vec![T::ZERO; numel];
    let (ad, bd) = (a.data(), b.data());
    for (idx, slot) in out.iter_mut().enumerate() {
        let mut lin = idx;
        let mut oa = 0usize;
        let mut ob = 0usize;
        for d in 0..oshape.len() {
            let c = lin / so[d];
            lin -= c * so[d];
            oa += c * sa[d];
            ob += c * sb[d];
        }
        *slot = f(ad[oa], bd[ob]);
    }
    Tensor::new(out, &oshape)
}

/// Sum `src` down to `target` shape (inverse of broadcasting).
fn reduce_to_shape<T: Element>(src: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    if src.shape() == target {
        return src.clone();
    }
    let st = aligned_strides(target, src.shape());
    let ss = strides_of(src.shape());
    let numel: usize = target.iter().product();
    let mut out = vec![T::ZERO; numel];
    for (idx, &v) in src.data().iter().enumerate() {
        let mut lin = idx;
        let mut ot = 0usize;
        for d in 0..src.shape().len() {
            let c = lin / ss[d];
            lin -= c * ss[d];
            ot += c * st[d];
        }
        out[ot] += v;
    }
    Tensor::new(out, target).expect("reduce_to_shape: target numel")
}

fn broadcast_to<T: Element>(src: &Tensor<T>, target: &[usize]) -> Option<Tensor<T>> {
    if src.shape() == target {
        return Some(src.clone());
    }
    let bshape = broadcast_shapes(src.shape(), target)?;
    if bshape != target {
        return None;
    }
    let ss = aligned_strides(src.shape(), target);
    let so = strides_of(target);
    let numel: usize = target.iter().product();
    let mut out = vec![T::ZERO; numel];
    let sd = src.data();
    for (idx, slot) in out.iter_mut().enumerate() {
        let mut lin = idx;
        let mut os = 0usize;
        for d in 0..target.len() {
            let c = lin / so[d];
            lin -= c * so[d];
            os += c * ss[d];
        }
        *slot = sd[os];
    }
    Tensor::new(out, target).ok()
}

fn transpose_last2_tensor<T: Element>(t: &Tensor<T>) -> Tensor<T> {
    let shape = t.shape();
    let rank = shape.len();
    let (m, n) = (shape[rank - 2], shape[rank - 1]);
    let batch: usize = shape[..rank - 2].iter().product();
    let mut out = vec![T::ZERO; t.numel()];
    let data = t.data();
    for b in 0..batch {
        let chunk = transpose2d(&data[b * m * n..(b + 1) * m * n], m, n);
        out[b * m * n..(b + 1) * m * n].copy_from_slice(&chunk);
    }
    let mut oshape = shape.to_vec();
    oshape.swap(rank - 2, rank - 1);
    Tensor::new(out, &oshape).expect("transpose_last2 numel")
}

fn permute_tensor<T: Element>(t: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let shape = t.shape();
    let oshape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides_of(shape);
    let out_strides = strides_of(&oshape);
    let mut out = vec![T::ZERO; t.numel()];
    let data = t.data();
    for (idx, &v) in data.iter().enumerate() {
        let mut lin = idx;
        let mut o = 0usize;
        for (d, &stride) in in_strides.iter().enumerate() {
            let c = lin / stride;
            lin -= c * stride;
            let od = perm.iter().position(|&p| p == d).unwrap();
            o += c * out_strides[od];
        }
        out[o] = v;
    }
    Tensor::new(out, &oshape).expect("permute numel")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(values: &[f64], shape: &[usize]) -> Tensor<f64> {
        Tensor::from_f64_slice(values, shape).unwrap()
    }

    #[test]
    fn conv2d_identity_1x1_kernel() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], &[1, 2, 2, 2]), false, "x");
        // identity over channels: w[co,ci,0,0] = delta(co,ci)
        let w = g.constant(t64(&[1.0, 0.0, 0.0, 1.0], &[2, 2, 1, 1]));
        let b = g.constant(t64(&[0.0, 0.0], &[2]));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn conv2d_all_ones_sums_window() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(&[1, 1, 3, 3], 1.0), false, "x");
        let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1, 1]);
        assert!((g.value(y).item() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn conv2d_shape_mismatch_names_axes() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(&[1, 3, 4, 4]), false, "x");
        let w = g.constant(Tensor::zeros(&[2, 4, 3, 3]));
        let b = g.constant(Tensor::zeros(&[2]));
        let err = g.conv2d(x, w, b, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('4'), "{msg}");
    }

    #[test]
    fn linear_identity_and_analytic() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(&[2.0, 3.0], &[1, 2]), false, "x");
        let w_id = g.constant(t64(&[1.0, 0.0, 0.0, 1.0], &[2, 2]));
        let zero2 = g.constant(Tensor::zeros(&[2]));
        let y = g.linear(x, w_id, zero2).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 3.0]);

        let w = g.constant(t64(&[1.0, 1.0], &[1, 2]));
        let zero1 = g.constant(Tensor::zeros(&[1]));
        let y2 = g.linear(x, w, zero1).unwrap();
        assert_eq!(g.value(y2).data(), &[5.0]);
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(&[0.0, 0.0], &[2]), false, "x");
        let s = g.softmax(x, 0).unwrap();
        assert!((g.value(s).data()[0] - 0.5).abs() < 1e-12);

        let big = g.leaf(t64(&[1000.0, 0.0], &[2]), false, "big");
        let sb = g.softmax(big, 0).unwrap();
        let v = g.value(sb).data();
        assert!(v[0] > 1.0 - 1e-9 && v[1] < 1e-9);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn softmax_rows_sum_to_one_under_large_magnitudes() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(&[1e4, -1e4, 3.0, 2.5, -9e3, 1e4], &[2, 3]), false, "x");
        let s = g.softmax(x, 1).unwrap();
        for row in g.value(s).data().chunks(3) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn gelu_fixed_points() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(&[0.0, 6.0], &[2]), false, "x");
        let y = g.gelu(x);
        let v = g.value(y).data();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 6.0).abs() < 1e-3);
    }

    #[test]
    fn attention_single_token_is_identity() {
        let mut g = Graph::<f64>::new();
        let q = g.leaf(t64(&[0.3, -0.7], &[1, 1, 1, 2]), false, "q");
        let k = g.leaf(t64(&[1.4, 0.2], &[1, 1, 1, 2]), false, "k");
        let v = g.leaf(t64(&[5.0, -3.0], &[1, 1, 1, 2]), false, "v");
        let out = g.attention(q, k, v).unwrap();
        assert_eq!(g.value(out).data(), g.value(v).data());
    }

    #[test]
    fn attention_identical_keys_uniform_weights() {
        let mut g = Graph::<f64>::new();
        // T=3 identical key rows: attention output = mean of v rows.
        let q = g.leaf(t64(&[0.5, 1.0, -0.3, 0.2, 0.9, -1.0], &[1, 1, 3, 2]), false, "q");
        let k = g.leaf(t64(&[0.7, -0.1, 0.7, -0.1, 0.7, -0.1], &[1, 1, 3, 2]), false, "k");
        let v = g.leaf(t64(&[3.0, 0.0, 0.0, 3.0, 3.0, 3.0], &[1, 1, 3, 2]), false, "v");
        let out = g.attention(q, k, v).unwrap();
        for row in g.value(out).data().chunks(2) {
            assert!((row[0] - 2.0).abs() < 1e-12);
            assert!((row[1] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_constant_input_returns_shift() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(&[2, 4], 3.7), false, "x");
        let gain = g.constant(Tensor::full(&[4], 2.0));
        let shift = g.constant(t64(&[1.0, 2.0, 3.0, 4.0], &[4]));
        let y = g.layer_norm(x, gain, shift, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn layer_norm_two_point_row() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(&[1.0, -1.0], &[1, 2]), false, "x");
        let gain = g.constant(Tensor::full(&[2], 1.0));
        let shift = g.constant(Tensor::zeros(&[2]));
        let y = g.layer_norm(x, gain, shift, 1e-12).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 1.0).abs() < 1e-3 && (v[1] + 1.0).abs() < 1e-3);
    }

    #[test]
    fn dropout_eval_is_identity_train_scales() {
        let mut rng = Rng::seeded(3);
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(&[1000], 1.0), false, "x");
        let y_eval = g.dropout(x, 0.4, Mode::Eval, &mut rng).unwrap();
        assert_eq!(g.value(y_eval).data(), g.value(x).data());
        let y_train = g.dropout(x, 0.4, Mode::Train, &mut rng).unwrap();
        let kept: Vec<f64> = g.value(y_train).data().iter().copied().filter(|&v| v != 0.0).collect();
        let scale = 1.0 / 0.6;
        assert!(kept.iter().all(|&v| (v - scale).abs() < 1e-12));
        let frac = kept.len() as f64 / 1000.0;
        assert!((frac - 0.6).abs() < 0.05, "kept fraction {frac}");
    }

    #[test]
    fn backward_of_simple_product() {
        // d/dx (x*y + x) at x=2, y=3 is y+1 = 4.
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(2.0), true, "x");
        let y = g.leaf(Tensor::scalar(3.0), true, "y");
        let xy = g.mul(x, y).unwrap();
        let s = g.add(xy, x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 4.0);
        assert_eq!(g.grad(y).unwrap().item(), 2.0);
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::zeros(&[2, 3]), true, "a");
        let b = g.leaf(Tensor::zeros(&[3]), true, "b");
        let s = g.add(a, b).unwrap();
        let total = g.sum_all(s).unwrap();
        g.backward(total).unwrap();
        assert_eq!(g.grad(a).unwrap().shape(), &[2, 3]);
        assert_eq!(g.grad(b).unwrap().shape(), &[3]);
        assert_eq!(g.grad(b).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn reduce_mean_axis_keeps_dims() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]), true, "x");
        let m = g.mean_axes(x, &[0]).unwrap();
        assert_eq!(g.shape(m), &[1, 3]);
        assert_eq!(g.value(m).data(), &[2.5, 3.5, 4.5]);
        let s = g.sum_all(m).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn concat_narrow_roundtrip() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(t64(&[1.0, 2.0], &[1, 2]), true, "a");
        let b = g.leaf(t64(&[3.0, 4.0, 5.0], &[1, 3]), true, "b");
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let back = g.narrow(c, 1, 2, 3).unwrap();
        assert_eq!(g.value(back).data(), &[3.0, 4.0, 5.0]);
        let s = g.sum_all(back).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(g.grad(b).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn permute_roundtrips_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(t64(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[1, 2, 3]), true, "x");
        let p = g.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(g.shape(p), &[3, 1, 2]);
        let s = g.sum_all(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().shape(), &[1, 2, 3]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(&[2]), true, "x");
        assert!(g.backward(x).is_err());
    }
}
