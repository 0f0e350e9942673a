//! Dense row-major tensors and the scalar element abstraction.
//!
//! Everything in the differentiable core is generic over [`Element`] so the
//! same graph code runs in `f32` for training and in `f64` for the
//! finite-difference gradient gate, where single-precision noise would mask
//! real bugs.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use rayon::prelude::*;

use crate::error::TensorError;

/// Scalar type usable inside the differentiable core.
pub trait Element:
    Copy
    + Debug
    + Send
    + Sync
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn powf(self, e: Self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    fn mul_add(self, a: Self, b: Self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn minimum(self, other: Self) -> Self;
}

macro_rules! impl_element {
    ($t:ty) => {
        impl Element for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline(always)]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline(always)]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline(always)]
            fn tanh(self) -> Self {
                self.tanh()
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline(always)]
            fn powf(self, e: Self) -> Self {
                self.powf(e)
            }
            #[inline(always)]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                self.is_finite()
            }
            #[inline(always)]
            fn mul_add(self, a: Self, b: Self) -> Self {
                self.mul_add(a, b)
            }
            #[inline(always)]
            fn maximum(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
            #[inline(always)]
            fn minimum(self, other: Self) -> Self {
                if self < other {
                    self
                } else {
                    other
                }
            }
        }
    };
}

impl_element!(f32);
impl_element!(f64);

/// Dense row-major n-dimensional array.
///
/// Scalars use shape `[1]`. There is no view machinery: transposes and
/// reshapes that change layout copy, which keeps gradient code simple and
/// allocation patterns predictable.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Element> {
    data: Vec<T>,
    shape: Vec<usize>,
}

impl<T: Element> Tensor<T> {
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::Shape {
                op: "Tensor::new".into(),
                detail: format!("data length {} != shape {:?} product {}", data.len(), shape, numel),
            });
        }
        Ok(Self { data, shape: shape.to_vec() })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self { data: vec![T::ZERO; numel], shape: shape.to_vec() }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel: usize = shape.iter().product();
        Self { data: vec![value; numel], shape: shape.to_vec() }
    }

    pub fn scalar(value: T) -> Self {
        Self { data: vec![value], shape: vec![1] }
    }

    pub fn from_f64_slice(values: &[f64], shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(values.iter().map(|&v| T::from_f64(v)).collect(), shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Single scalar value of a one-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1, "item() on tensor with shape {:?}", self.shape);
        self.data[0]
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(TensorError::Shape {
                op: "reshape".into(),
                detail: format!("cannot reshape {:?} ({} elements) to {:?}", self.shape, self.numel(), shape),
            });
        }
        Ok(Self { data: self.data.clone(), shape: shape.to_vec() })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { data: self.data.iter().map(|&x| f(x)).collect(), shape: self.shape.clone() }
    }

    pub fn add_assign_tensor(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    pub fn all_finite(&self) -> bool {
        // NaN/Inf propagate through summation, so one reduction checks all
        // elements without a per-element branch.
        let mut acc = T::ZERO;
        for &x in &self.data {
            acc += x;
        }
        acc.is_finite()
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
            shape: self.shape.clone(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|&x| x.to_f64()).collect()
    }
}

pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

const PAR_FLOP_THRESHOLD: usize = 1 << 18;
const GEMM_TILE: usize = 512;
const ROW_BLOCK: usize = 8;
const P_BLOCK: usize = 128;

/// `c[m,n] = a[m,k] · b[k,n]`, row-major.
///
/// Two loop orders cover the shapes this crate produces: a row-blocked path
/// for tall outputs (each pass over the `[k,n]` operand feeds eight output
/// rows) and a column-tiled path for flat/wide outputs (convolution layouts)
/// that keeps an accumulator tile hot while streaming the big operand once.
/// Every output element accumulates in a fixed k-ascending order on a single
/// thread, so results are bit-identical regardless of thread count.
pub fn gemm<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![T::ZERO; m * n];
    let work = m * k * n;
    if work <= PAR_FLOP_THRESHOLD {
        for (block, rows) in c.chunks_mut(ROW_BLOCK * n).enumerate() {
            gemm_row_block(&a[block * ROW_BLOCK * k..], b, k, n, rows);
        }
    } else if m >= 64 && n <= 2048 && k * n * std::mem::size_of::<T>() <= (2 << 20) {
        c.par_chunks_mut(ROW_BLOCK * n).enumerate().for_each(|(block, rows)| {
            gemm_row_block(&a[block * ROW_BLOCK * k..], b, k, n, rows);
        });
    } else {
        let tiles: Vec<(usize, usize)> =
            (0..n).step_by(GEMM_TILE).map(|t0| (t0, (t0 + GEMM_TILE).min(n))).collect();
        struct SendPtr<T>(*mut T);
        unsafe impl<T> Send for SendPtr<T> {}
        unsafe impl<T> Sync for SendPtr<T> {}
        let c_ptr = SendPtr(c.as_mut_ptr());
        tiles.par_iter().for_each(|&(t0, t1)| {
            let c_ptr = &c_ptr;
            let w = t1 - t0;
            for p0 in (0..k).step_by(P_BLOCK) {
                let p1 = (p0 + P_BLOCK).min(k);
                for i in 0..m {
                    // Tiles are disjoint column ranges: each element is
                    // written by exactly one tile task.
                    let row = unsafe { std::slice::from_raw_parts_mut(c_ptr.0.add(i * n + t0), w) };
                    for p in p0..p1 {
                        let a_ip = a[i * k + p];
                        let b_seg = &b[p * n + t0..p * n + t1];
                        for (o, &bv) in row.iter_mut().zip(b_seg.iter()) {
                            *o = a_ip.mul_add(bv, *o);
                        }
                    }
                }
            }
        });
    }
    c
}

/// Accumulate up to [`ROW_BLOCK`] output rows per pass over `b`.
#[inline]
fn gemm_row_block<T: Element>(a: &[T], b: &[T], k: usize, n: usize, rows: &mut [T]) {
    let n_rows = rows.len() / n;
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for r in 0..n_rows {
            let a_rp = a[r * k + p];
            let out = &mut rows[r * n..(r + 1) * n];
            for (o, &bv) in out.iter_mut().zip(b_row.iter()) {
                *o = a_rp.mul_add(bv, *o);
            }
        }
    }
}

/// 2-D transpose copy: `[m,n] -> [n,m]`.
pub fn transpose2d<T: Element>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Geometry of one conv2d application.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvDims {
    pub fn compute(
        input_shape: &[usize],
        weight_shape: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self, TensorError> {
        if input_shape.len() != 4 || weight_shape.len() != 4 {
            return Err(TensorError::Shape {
                op: "conv2d".into(),
                detail: format!(
                    "expected input [B,Cin,H,W] and weight [Cout,Cin,kh,kw], got {input_shape:?} and {weight_shape:?}"
                ),
            });
        }
        let (batch, c_in, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
        let (c_out, wc_in, kh, kw) = (weight_shape[0], weight_shape[1], weight_shape[2], weight_shape[3]);
        if wc_in != c_in {
            return Err(TensorError::Shape {
                op: "conv2d".into(),
                detail: format!("input channel axis {c_in} != weight channel axis {wc_in}"),
            });
        }
        if kh == 0 || kw == 0 || stride == 0 {
            return Err(TensorError::Shape {
                op: "conv2d".into(),
                detail: format!("kernel {kh}x{kw} and stride {stride} must be >= 1"),
            });
        }
        // Floor semantics: partial windows at the bottom/right are dropped,
        // matching the usual convolution output-size convention.
        let h_num = h + 2 * padding;
        let w_num = w + 2 * padding;
        if h_num < kh || w_num < kw {
            return Err(TensorError::Shape {
                op: "conv2d".into(),
                detail: format!(
                    "kernel {kh}x{kw} larger than padded input {h_num}x{w_num} (input {h}x{w}, padding {padding})"
                ),
            });
        }
        Ok(Self {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            padding,
            oh: (h_num - kh) / stride + 1,
            ow: (w_num - kw) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.batch * self.oh * self.ow
    }

    pub fn col_cols(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
}

/// `dst[:, m] += w[ro, ri] * src[:, m + delta]` over the valid column range,
/// m-tiled so the row blocks of both operands stay cache-resident. The core
/// of the direct (stride-1) convolution: one call per kernel tap, `delta`
/// the tap's constant column offset in the padded grid.
pub fn tap_gemm_acc<T: Element>(
    w: &[T],
    src: &[T],
    dst: &mut [T],
    rows_out: usize,
    rows_in: usize,
    mp: usize,
    delta: isize,
) {
    debug_assert_eq!(w.len(), rows_out * rows_in);
    debug_assert_eq!(src.len(), rows_in * mp);
    debug_assert_eq!(dst.len(), rows_out * mp);
    let m_lo = if delta < 0 { (-delta) as usize } else { 0 };
    let m_hi = if delta > 0 { mp - (delta as usize) } else { mp };
    if m_lo >= m_hi {
        return;
    }
    const M_TILE: usize = 2048;
    let tiles: Vec<(usize, usize)> =
        (m_lo..m_hi).step_by(M_TILE).map(|t0| (t0, (t0 + M_TILE).min(m_hi))).collect();
    struct SendPtr<T>(*mut T);
    unsafe impl<T> Send for SendPtr<T> {}
    unsafe impl<T> Sync for SendPtr<T> {}
    let dst_ptr = SendPtr(dst.as_mut_ptr());
    tiles.par_iter().for_each(|&(t0, t1)| {
        let dst_ptr = &dst_ptr;
        let width = t1 - t0;
        let mut ro0 = 0;
        // Four destination rows share each pass over the source segment.
        while ro0 + 4 <= rows_out {
            for ri in 0..rows_in {
                let s0 = (ri * mp) as isize + t0 as isize + delta;
                let src_seg = &src[s0 as usize..s0 as usize + width];
                let w0 = w[ro0 * rows_in + ri];
                let w1 = w[(ro0 + 1) * rows_in + ri];
                let w2 = w[(ro0 + 2) * rows_in + ri];
                let w3 = w[(ro0 + 3) * rows_in + ri];
                // Tiles are disjoint column ranges.
                unsafe {
                    let o0 = std::slice::from_raw_parts_mut(dst_ptr.0.add(ro0 * mp + t0), width);
                    let o1 = std::slice::from_raw_parts_mut(dst_ptr.0.add((ro0 + 1) * mp + t0), width);
                    let o2 = std::slice::from_raw_parts_mut(dst_ptr.0.add((ro0 + 2) * mp + t0), width);
                    let o3 = std::slice::from_raw_parts_mut(dst_ptr.0.add((ro0 + 3) * mp + t0), width);
                    for j in 0..width {
                        let sv = *src_seg.get_unchecked(j);
                        *o0.get_unchecked_mut(j) = w0.mul_add(sv, *o0.get_unchecked(j));
                        *o1.get_unchecked_mut(j) = w1.mul_add(sv, *o1.get_unchecked(j));
                        *o2.get_unchecked_mut(j) = w2.mul_add(sv, *o2.get_unchecked(j));
                        *o3.get_unchecked_mut(j) = w3.mul_add(sv, *o3.get_unchecked(j));
                    }
                }
            }
            ro0 += 4;
        }
        for ro in ro0..rows_out {
            for ri in 0..rows_in {
                let s0 = (ri * mp) as isize + t0 as isize + delta;
                let src_seg = &src[s0 as usize..s0 as usize + width];
                let w_v = w[ro * rows_in + ri];
                let out = unsafe { std::slice::from_raw_parts_mut(dst_ptr.0.add(ro * mp + t0), width) };
                for (o, &sv) in out.iter_mut().zip(src_seg.iter()) {
                    *o = w_v.mul_add(sv, *o);
                }
            }
        }
    });
}

/// Per-tap weight gradient for the direct convolution path:
/// `dw[ro, ri] = sum_m g[ro, m] * src[ri, m + delta]`, m-blocked so both
/// operand blocks stay cache-resident, parallel over `ro` inside each block.
pub fn tap_dw<T: Element>(
    g: &[T],
    src: &[T],
    rows_out: usize,
    rows_in: usize,
    mp: usize,
    delta: isize,
) -> Vec<T> {
    debug_assert_eq!(g.len(), rows_out * mp);
    debug_assert_eq!(src.len(), rows_in * mp);
    let m_lo = if delta < 0 { (-delta) as usize } else { 0 };
    let m_hi = if delta > 0 { mp - (delta as usize) } else { mp };
    let mut dw = vec![T::ZERO; rows_out * rows_in];
    if m_lo >= m_hi {
        return dw;
    }
    const M_BLOCK: usize = 2048;
    for b0 in (m_lo..m_hi).step_by(M_BLOCK) {
        let b1 = (b0 + M_BLOCK).min(m_hi);
        dw.par_chunks_mut(rows_in).enumerate().for_each(|(ro, row)| {
            let g_seg = &g[ro * mp + b0..ro * mp + b1];
            for (ri, slot) in row.iter_mut().enumerate() {
                let s0 = (ri * mp) as isize + b0 as isize + delta;
                let src_seg = &src[s0 as usize..s0 as usize + g_seg.len()];
                *slot += dot(g_seg, src_seg);
            }
        });
    }
    dw
}

/// Dot product with eight independent accumulator lanes; a plain fused
/// accumulation chain cannot vectorize (strict FP ordering), this fixed
/// lane split can. The combination order is fixed, so results stay
/// deterministic.
pub fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    const L: usize = 32;
    let mut lanes = [T::ZERO; L];
    let chunks = a.len() / L;
    for i in 0..chunks {
        let (av, bv) = (&a[i * L..(i + 1) * L], &b[i * L..(i + 1) * L]);
        for l in 0..L {
            lanes[l] = av[l].mul_add(bv[l], lanes[l]);
        }
    }
    let mut tail = T::ZERO;
    for i in chunks * L..a.len() {
        tail = a[i].mul_add(b[i], tail);
    }
    fold_lanes(&lanes) + tail
}

/// Pairwise lane reduction in a fixed order.
fn fold_lanes<T: Element>(lanes: &[T; 32]) -> T {
    let mut acc = [T::ZERO; 16];
    for i in 0..16 {
        acc[i] = lanes[i] + lanes[i + 16];
    }
    let mut acc8 = [T::ZERO; 8];
    for i in 0..8 {
        acc8[i] = acc[i] + acc[i + 8];
    }
    let s01 = acc8[0] + acc8[1];
    let s23 = acc8[2] + acc8[3];
    let s45 = acc8[4] + acc8[5];
    let s67 = acc8[6] + acc8[7];
    (s01 + s23) + (s45 + s67)
}

/// Sum with eight accumulator lanes; see [`dot`].
pub fn sum<T: Element>(a: &[T]) -> T {
    const L: usize = 32;
    let mut lanes = [T::ZERO; L];
    let chunks = a.len() / L;
    for i in 0..chunks {
        let av = &a[i * L..(i + 1) * L];
        for l in 0..L {
            lanes[l] += av[l];
        }
    }
    let mut tail = T::ZERO;
    for v in &a[chunks * L..] {
        tail += *v;
    }
    fold_lanes(&lanes) + tail
}

/// Sum of squared deviations from `mean`, eight-lane unrolled; see [`dot`].
pub fn sum_sq_dev<T: Element>(a: &[T], mean: T) -> T {
    const L: usize = 32;
    let mut lanes = [T::ZERO; L];
    let chunks = a.len() / L;
    for i in 0..chunks {
        let av = &a[i * L..(i + 1) * L];
        for l in 0..L {
            let d = av[l] - mean;
            lanes[l] = d.mul_add(d, lanes[l]);
        }
    }
    let mut tail = T::ZERO;
    for v in &a[chunks * L..] {
        let d = *v - mean;
        tail = d.mul_add(d, tail);
    }
    fold_lanes(&lanes) + tail
}

/// Valid output range along one spatial axis for a kernel offset `kq`:
/// positions whose sampled input index lands inside `[0, extent)`.
#[inline]
fn valid_out_range(extent: usize, out_extent: usize, stride: usize, padding: usize, kq: usize) -> (usize, usize) {
    // need 0 <= o*stride + kq - padding < extent
    let lo = padding.saturating_sub(kq).div_ceil(stride);
    let hi_excl = if extent + padding > kq {
        ((extent + padding - kq - 1) / stride + 1).min(out_extent)
    } else {
        0
    };
    (lo.min(hi_excl), hi_excl)
}

/// Unfold input patches into the transposed `[Cin*kh*kw, B*OH*OW]` layout,
/// which feeds the wide-output gemm orientation of the forward convolution.
/// Out-of-range (padding) samples stay zero.
pub fn im2col_t<T: Element>(input: &[T], d: &ConvDims) -> Vec<T> {
    let m = d.col_rows();
    let mut col = vec![T::ZERO; d.col_cols() * m];
    let hw = d.h * d.w;
    let chw = d.c_in * hw;
    let ohw = d.oh * d.ow;
    for c in 0..d.c_in {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let kk = (c * d.kh + ky) * d.kw + kx;
                let krow = &mut col[kk * m..(kk + 1) * m];
                let (oy_lo, oy_hi) = valid_out_range(d.h, d.oh, d.stride, d.padding, ky);
                let (ox_lo, ox_hi) = valid_out_range(d.w, d.ow, d.stride, d.padding, kx);
                if ox_lo >= ox_hi {
                    continue;
                }
                for b in 0..d.batch {
                    let in_c = &input[b * chw + c * hw..b * chw + (c + 1) * hw];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * d.stride + ky - d.padding;
                        let in_row = &in_c[iy * d.w..(iy + 1) * d.w];
                        let out_base = b * ohw + oy * d.ow;
                        let ix0 = ox_lo * d.stride + kx - d.padding;
                        if d.stride == 1 {
                            krow[out_base + ox_lo..out_base + ox_hi]
                                .copy_from_slice(&in_row[ix0..ix0 + (ox_hi - ox_lo)]);
                        } else {
                            let mut ix = ix0;
                            for ox in ox_lo..ox_hi {
                                krow[out_base + ox] = in_row[ix];
                                ix += d.stride;
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Fold a transposed column-gradient matrix `[Cin*kh*kw, B*OH*OW]` back onto
/// the input layout (scatter-add); adjoint of [`im2col_t`].
pub fn col2im_t<T: Element>(col: &[T], d: &ConvDims) -> Vec<T> {
    let m = d.col_rows();
    let hw = d.h * d.w;
    let chw = d.c_in * hw;
    let ohw = d.oh * d.ow;
    let mut input = vec![T::ZERO; d.batch * chw];
    for c in 0..d.c_in {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let kk = (c * d.kh + ky) * d.kw + kx;
                let krow = &col[kk * m..(kk + 1) * m];
                let (oy_lo, oy_hi) = valid_out_range(d.h, d.oh, d.stride, d.padding, ky);
                let (ox_lo, ox_hi) = valid_out_range(d.w, d.ow, d.stride, d.padding, kx);
                if ox_lo >= ox_hi {
                    continue;
                }
                for b in 0..d.batch {
                    let in_c = &mut input[b * chw + c * hw..b * chw + (c + 1) * hw];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * d.stride + ky - d.padding;
                        let in_row = &mut in_c[iy * d.w..(iy + 1) * d.w];
                        let out_base = b * ohw + oy * d.ow;
                        let ix0 = ox_lo * d.stride + kx - d.padding;
                        if d.stride == 1 {
                            let src = &krow[out_base + ox_lo..out_base + ox_hi];
                            let dst = &mut in_row[ix0..ix0 + src.len()];
                            for (o, &s) in dst.iter_mut().zip(src.iter()) {
                                *o += s;
                            }
                        } else {
                            let mut ix = ix0;
                            for ox in ox_lo..ox_hi {
                                in_row[ix] += krow[out_base + ox];
                                ix += d.stride;
                            }
                        }
                    }
                }
            }
        }
    }
    input
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let a: Vec<f64> = (0..6).map(|i| i as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64) * 0.5).collect(); // 3x4
        let c = gemm(&a, &b, 2, 3, 4);
        let mut expect = vec![0.0; 8];
        for i in 0..2 {
            for j in 0..4 {
                for p in 0..3 {
                    expect[i * 4 + j] += a[i * 3 + p] * b[p * 4 + j];
                }
            }
        }
        assert_eq!(c, expect);
    }

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col_t(x), y> == <x, col2im_t(y)> for random x, y: the pair is
        // a linear map and its transpose.
        for (stride, padding) in [(1, 1), (2, 1), (2, 0), (4, 0)] {
            let d = match ConvDims::compute(&[2, 3, 8, 8], &[4, 3, 3, 3], stride, padding) {
                Ok(d) => d,
                Err(_) => continue,
            };
            let nx = 2 * 3 * 8 * 8;
            let ny = d.col_rows() * d.col_cols();
            let x: Vec<f64> = (0..nx).map(|i| ((i * 37 + 11) % 17) as f64 - 8.0).collect();
            let y: Vec<f64> = (0..ny).map(|i| ((i * 13 + 5) % 19) as f64 - 9.0).collect();
            let fx = im2col_t(&x, &d);
            let fty = col2im_t(&y, &d);
            let lhs: f64 = fx.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&fty).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9, "stride {stride} pad {padding}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn conv_dims_floors_partial_windows() {
        let d = ConvDims::compute(&[1, 1, 5, 5], &[1, 1, 2, 2], 2, 0).unwrap();
        assert_eq!((d.oh, d.ow), (2, 2));
        let err = ConvDims::compute(&[1, 1, 2, 2], &[1, 1, 5, 5], 1, 0).unwrap_err();
        assert!(err.to_string().contains("larger than"));
    }

    #[test]
    fn tensor_new_validates_length() {
        assert!(Tensor::<f32>::new(vec![1.0, 2.0], &[3]).is_err());
    }
}
