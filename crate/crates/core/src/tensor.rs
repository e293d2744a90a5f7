//! Dense tensors and the raw numeric kernels.
//!
//! [`Tensor`] is a shape-tagged row-major buffer, generic over [`Elem`]
//! so the same kernels run in f32 (training/tracking) and f64 (gradient
//! checking). Kernels are free functions over slices; [`crate::tape`]
//! wires them into the differentiation tape.
//!
//! Convolution follows the cross-correlation convention (no kernel flip)
//! with `H' = (H + 2*pad - kh) / stride + 1`.

use crate::{Error, Result};
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Scalar element: f32 for speed, f64 for oracle-grade checks.
pub trait Elem:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
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
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    fn maxe(self, other: Self) -> Self;
    fn mine(self, other: Self) -> Self;
    fn powf(self, e: Self) -> Self;
}

macro_rules! impl_elem {
    ($t:ty) => {
        impl Elem for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline]
            fn ln_1p(self) -> Self {
                self.ln_1p()
            }
            #[inline]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline]
            fn maxe(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
            #[inline]
            fn mine(self, other: Self) -> Self {
                if self < other {
                    self
                } else {
                    other
                }
            }
            #[inline]
            fn powf(self, e: Self) -> Self {
                self.powf(e)
            }
        }
    };
}

impl_elem!(f32);
impl_elem!(f64);

/// Dense n-dimensional array, row-major. `product(shape) == data.len()`
/// always holds; constructors enforce it.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E: Elem> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Elem> Tensor<E> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![E::ZERO; n] }
    }

    pub fn filled(shape: &[usize], v: E) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "from_vec",
                detail: format!("shape {:?} wants {} values, got {}", shape, n, data.len()),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn scalar(v: E) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// The single value of a 1-element tensor.
    pub fn item(&self) -> Result<E> {
        if self.data.len() != 1 {
            return Err(Error::Shape {
                op: "item",
                detail: format!("expected scalar, shape is {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }

    /// Errors if any value is NaN or Inf.
    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    op,
                    detail: format!("element {i} of shape {:?} is {v}", self.shape),
                });
            }
        }
        Ok(())
    }

    pub fn map<F: Elem>(&self, f: impl Fn(E) -> F) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        self.map(|v| v.to_f64())
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        self.map(|v| v.to_f64() as f32)
    }
}

/// `(H + 2*pad - k) / stride + 1`, erroring when the window does not fit.
pub fn conv_out_len(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Invalid { what: "stride", detail: "stride must be >= 1".into() });
    }
    let padded = input + 2 * pad;
    if padded < k {
        return Err(Error::Shape {
            op: "conv2d",
            detail: format!("kernel {k} does not fit input {input} with pad {pad}"),
        });
    }
    Ok((padded - k) / stride + 1)
}

/// Forward 2-D convolution (cross-correlation convention).
///
/// `input` is `[cin, h, w]`, `kernel` is `[cout, cin, kh, kw]`, output is
/// `[cout, oh, ow]`.
pub fn conv2d_fwd<E: Elem>(
    input: &Tensor<E>,
    kernel: &Tensor<E>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<E>> {
    let (cin, h, w) = dims3(input, "conv2d input")?;
    let ks = kernel.shape();
    if ks.len() != 4 {
        return Err(Error::Shape {
            op: "conv2d",
            detail: format!("kernel must be rank 4, got {:?}", ks),
        });
    }
    let (cout, kcin, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    if kcin != cin {
        return Err(Error::Shape {
            op: "conv2d",
            detail: format!("kernel expects {kcin} input channels, input has {cin}"),
        });
    }
    let oh = conv_out_len(h, kh, stride, pad)?;
    let ow = conv_out_len(w, kw, stride, pad)?;
    let mut out = Tensor::zeros(&[cout, oh, ow]);

    let idata = input.data();
    let kdata = kernel.data();
    let odata = out.data_mut();
    for co in 0..cout {
        for ci in 0..cin {
            let kbase = (co * cin + ci) * kh * kw;
            let ibase = ci * h * w;
            for ku in 0..kh {
                for kv in 0..kw {
                    let kval = kdata[kbase + ku * kw + kv];
                    if kval == E::ZERO {
                        continue;
                    }
                    let (oy_lo, oy_hi) = valid_out_range(h, ku, stride, pad, oh);
                    let (ox_lo, ox_hi) = valid_out_range(w, kv, stride, pad, ow);
                    if oy_lo >= oy_hi || ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let irow = ibase + (oy * stride + ku - pad) * w;
                        let orow = (co * oh + oy) * ow;
                        if stride == 1 {
                            let src = &idata[irow + ox_lo + kv - pad..irow + ox_hi - 1 + kv - pad + 1];
                            let dst = &mut odata[orow + ox_lo..orow + ox_hi];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += kval * *s;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                odata[orow + ox] += kval * idata[irow + ox * stride + kv - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Dot product with four independent accumulators (fixed summation
/// order, so results stay bit-deterministic while the lanes vectorize).
#[inline]
fn dot4<E: Elem>(a: &[E], b: &[E]) -> E {
    debug_assert_eq!(a.len(), b.len());
    let split = a.len() - a.len() % 4;
    let mut acc = [E::ZERO; 4];
    for (ca, cb) in a[..split].chunks_exact(4).zip(b[..split].chunks_exact(4)) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in a[split..].iter().zip(&b[split..]) {
        s += *x * *y;
    }
    s
}

/// Output rows `[lo, hi)` whose input row `o*stride + k - pad` is in
/// bounds.
#[inline]
fn valid_out_range(input: usize, k: usize, stride: usize, pad: usize, out: usize) -> (usize, usize) {
    if input + pad <= k {
        return (0, 0);
    }
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi_incl = (input - 1 + pad - k) / stride;
    (lo.min(out), (hi_incl + 1).min(out))
}

/// Gradient of `conv2d_fwd` w.r.t. its input.
pub fn conv2d_bwd_input<E: Elem>(
    grad_out: &Tensor<E>,
    kernel: &Tensor<E>,
    input_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<E> {
    let (cin, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let ks = kernel.shape();
    let (cout, kh, kw) = (ks[0], ks[2], ks[3]);
    let os = grad_out.shape();
    let (oh, ow) = (os[1], os[2]);
    let mut gin = Tensor::zeros(input_shape);
    let g = grad_out.data();
    let kdata = kernel.data();
    let gi = gin.data_mut();
    for co in 0..cout {
        for ci in 0..cin {
            let kbase = (co * cin + ci) * kh * kw;
            let ibase = ci * h * w;
            for ku in 0..kh {
                for kv in 0..kw {
                    let kval = kdata[kbase + ku * kw + kv];
                    if kval == E::ZERO {
                        continue;
                    }
                    let (oy_lo, oy_hi) = valid_out_range(h, ku, stride, pad, oh);
                    let (ox_lo, ox_hi) = valid_out_range(w, kv, stride, pad, ow);
                    if oy_lo >= oy_hi || ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let irow = ibase + (oy * stride + ku - pad) * w;
                        let orow = (co * oh + oy) * ow;
                        if stride == 1 {
                            let dst = &mut gi[irow + ox_lo + kv - pad..irow + ox_hi - 1 + kv - pad + 1];
                            let src = &g[orow + ox_lo..orow + ox_hi];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += kval * *s;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                gi[irow + ox * stride + kv - pad] += kval * g[orow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    gin
}

/// Gradient of `conv2d_fwd` w.r.t. the kernel.
pub fn conv2d_bwd_kernel<E: Elem>(
    grad_out: &Tensor<E>,
    input: &Tensor<E>,
    kernel_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Tensor<E> {
    let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (cout, kh, kw) = (kernel_shape[0], kernel_shape[2], kernel_shape[3]);
    let os = grad_out.shape();
    let (oh, ow) = (os[1], os[2]);
    let mut gk = Tensor::zeros(kernel_shape);
    let g = grad_out.data();
    let idata = input.data();
    let gkd = gk.data_mut();
    for co in 0..cout {
        for ci in 0..cin {
            let kbase = (co * cin + ci) * kh * kw;
            let ibase = ci * h * w;
            for ku in 0..kh {
                for kv in 0..kw {
                    let (oy_lo, oy_hi) = valid_out_range(h, ku, stride, pad, oh);
                    let (ox_lo, ox_hi) = valid_out_range(w, kv, stride, pad, ow);
                    let mut acc = E::ZERO;
                    for oy in oy_lo..oy_hi {
                        let irow = ibase + (oy * stride + ku - pad) * w;
                        let orow = (co * oh + oy) * ow;
                        if stride == 1 {
                            let src = &idata[irow + ox_lo + kv - pad..irow + ox_hi - 1 + kv - pad + 1];
                            let gr = &g[orow + ox_lo..orow + ox_hi];
                            acc += dot4(gr, src);
                        } else {
                            for ox in ox_lo..ox_hi {
                                acc += g[orow + ox] * idata[irow + ox * stride + kv - pad];
                            }
                        }
                    }
                    gkd[kbase + ku * kw + kv] += acc;
                }
            }
        }
    }
    gk
}

/// Per-channel valid cross-correlation: the template slides over the
/// search map within its own channel. Output is
/// `[c, hs - ht + 1, ws - wt + 1]`.
pub fn xcorr_depthwise_fwd<E: Elem>(
    template: &Tensor<E>,
    search: &Tensor<E>,
) -> Result<Tensor<E>> {
    let (ct, ht, wt) = dims3(template, "xcorr template")?;
    let (cs, hs, ws) = dims3(search, "xcorr search")?;
    if ct != cs {
        return Err(Error::Shape {
            op: "xcorr_depthwise",
            detail: format!("channel mismatch: template {ct}, search {cs}"),
        });
    }
    if ht > hs || wt > ws {
        return Err(Error::Shape {
            op: "xcorr_depthwise",
            detail: format!("template {ht}x{wt} larger than search {hs}x{ws}"),
        });
    }
    let (oh, ow) = (hs - ht + 1, ws - wt + 1);
    let mut out = Tensor::zeros(&[ct, oh, ow]);
    let t = template.data();
    let s = search.data();
    let o = out.data_mut();
    for c in 0..ct {
        let tbase = c * ht * wt;
        let sbase = c * hs * ws;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = E::ZERO;
                for u in 0..ht {
                    let trow = tbase + u * wt;
                    let srow = sbase + (oy + u) * ws + ox;
                    acc += dot4(&t[trow..trow + wt], &s[srow..srow + wt]);
                }
                o[(c * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Ok(out)
}

/// Gradients of `xcorr_depthwise_fwd` w.r.t. template and search.
pub fn xcorr_depthwise_bwd<E: Elem>(
    grad_out: &Tensor<E>,
    template: &Tensor<E>,
    search: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>) {
    let (c, ht, wt) = (template.shape()[0], template.shape()[1], template.shape()[2]);
    let (hs, ws) = (search.shape()[1], search.shape()[2]);
    let (oh, ow) = (grad_out.shape()[1], grad_out.shape()[2]);
    let mut gt = Tensor::zeros(template.shape());
    let mut gs = Tensor::zeros(search.shape());
    let g = grad_out.data();
    let t = template.data();
    let s = search.data();
    let gtd = gt.data_mut();
    let gsd = gs.data_mut();
    for ch in 0..c {
        let tbase = ch * ht * wt;
        let sbase = ch * hs * ws;
        let obase = ch * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g[obase + oy * ow + ox];
                if gv == E::ZERO {
                    continue;
                }
                for u in 0..ht {
                    let trow = tbase + u * wt;
                    let srow = sbase + (oy + u) * ws + ox;
                    for v in 0..wt {
                        gtd[trow + v] += gv * s[srow + v];
                        gsd[srow + v] += gv * t[trow + v];
                    }
                }
            }
        }
    }
    (gt, gs)
}

/// 2x2 stride-2 max pooling. Returns the pooled map and the flat argmax
/// index per output cell (ties resolved to the first element in scan
/// order), which the backward pass scatters into.
pub fn maxpool2_fwd<E: Elem>(input: &Tensor<E>) -> Result<(Tensor<E>, Vec<usize>)> {
    let (c, h, w) = dims3(input, "maxpool2 input")?;
    if h < 2 || w < 2 {
        return Err(Error::Shape {
            op: "maxpool2",
            detail: format!("input {h}x{w} smaller than 2x2 window"),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let mut arg = vec![0usize; c * oh * ow];
    let idata = input.data();
    let odata = out.data_mut();
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = (ch * h + oy * 2) * w + ox * 2;
                let mut best = idata[best_idx];
                for (du, dv) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (ch * h + oy * 2 + du) * w + ox * 2 + dv;
                    if idata[idx] > best {
                        best = idata[idx];
                        best_idx = idx;
                    }
                }
                let oidx = (ch * oh + oy) * ow + ox;
                odata[oidx] = best;
                arg[oidx] = best_idx;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2_bwd<E: Elem>(
    grad_out: &Tensor<E>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Tensor<E> {
    let mut gin = Tensor::zeros(input_shape);
    let gi = gin.data_mut();
    for (g, &src) in grad_out.data().iter().zip(argmax.iter()) {
        gi[src] += *g;
    }
    gin
}

/// Adds a per-channel bias to a `[c, h, w]` map.
pub fn bias_add_fwd<E: Elem>(input: &Tensor<E>, bias: &Tensor<E>) -> Result<Tensor<E>> {
    let (c, h, w) = dims3(input, "bias_add input")?;
    if bias.shape() != [c] {
        return Err(Error::Shape {
            op: "bias_add",
            detail: format!("bias shape {:?} does not match {c} channels", bias.shape()),
        });
    }
    let mut out = input.clone();
    let b = bias.data();
    let o = out.data_mut();
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..h * w {
            o[base + i] += b[ch];
        }
    }
    Ok(out)
}

/// Removes `border` rows/columns from every side of each channel.
pub fn crop_border_fwd<E: Elem>(input: &Tensor<E>, border: usize) -> Result<Tensor<E>> {
    let (c, h, w) = dims3(input, "crop_border input")?;
    if h <= 2 * border || w <= 2 * border {
        return Err(Error::Shape {
            op: "crop_border",
            detail: format!("border {border} leaves no pixels of {h}x{w}"),
        });
    }
    let (oh, ow) = (h - 2 * border, w - 2 * border);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let idata = input.data();
    let odata = out.data_mut();
    for ch in 0..c {
        for oy in 0..oh {
            let irow = (ch * h + oy + border) * w + border;
            let orow = (ch * oh + oy) * ow;
            odata[orow..orow + ow].copy_from_slice(&idata[irow..irow + ow]);
        }
    }
    Ok(out)
}

pub fn crop_border_bwd<E: Elem>(
    grad_out: &Tensor<E>,
    input_shape: &[usize],
    border: usize,
) -> Tensor<E> {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (oh, ow) = (grad_out.shape()[1], grad_out.shape()[2]);
    let mut gin = Tensor::zeros(input_shape);
    let g = grad_out.data();
    let gi = gin.data_mut();
    for ch in 0..c {
        for oy in 0..oh {
            let irow = (ch * h + oy + border) * w + border;
            let orow = (ch * oh + oy) * ow;
            for ox in 0..ow {
                gi[irow + ox] += g[orow + ox];
            }
        }
    }
    gin
}

fn dims3<E: Elem>(t: &Tensor<E>, what: &'static str) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(Error::Shape {
            op: "dims3",
            detail: format!("{what} must be rank 3, got {:?}", s),
        });
    }
    Ok((s[0], s[1], s[2]))
}
