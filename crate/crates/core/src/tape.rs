//! Reverse-mode differentiation tape.
//!
//! Every forward op appends a node holding its output tensor and enough
//! bookkeeping to replay the chain rule in exact reverse execution order.
//! Gradients accumulate additively when a value feeds several consumers.
//! One tape per forward pass; tensors on the tape are immutable.
//!
//! The op set is exactly what the model and objective need: convolution,
//! depthwise cross-correlation, pooling, border crop, a few pointwise
//! ops, and the three loss heads (focal, masked BCE, masked IoU) with
//! hand-derived analytic gradients. Every op checks its output for
//! NaN/Inf and fails instead of propagating.

use crate::tensor::{
    bias_add_fwd, conv2d_bwd_input, conv2d_bwd_kernel, conv2d_fwd, crop_border_bwd,
    crop_border_fwd, maxpool2_bwd, maxpool2_fwd, xcorr_depthwise_bwd, xcorr_depthwise_fwd, Elem,
    Tensor,
};
use crate::{Error, Result};

/// Handle to a value on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValId(usize);

enum Op<E: Elem> {
    Leaf,
    Conv2d { input: ValId, kernel: ValId, stride: usize, pad: usize },
    BiasAdd { input: ValId, bias: ValId },
    Xcorr { template: ValId, search: ValId },
    MaxPool2 { input: ValId, argmax: Vec<usize> },
    CropBorder { input: ValId, border: usize },
    Relu { input: ValId },
    Exp { input: ValId },
    Scale { input: ValId, c: E },
    Add { a: ValId, b: ValId },
    Mul { a: ValId, b: ValId },
    Sum { input: ValId },
    Focal { logits: ValId, cls_star: Vec<E>, gamma: E, alpha: E },
    BceMasked { logits: ValId, q_star: Vec<E>, mask: Vec<bool> },
    IouMasked { dist: ValId, dist_star: Vec<E>, mask: Vec<bool> },
    SmoothL1Masked { pred: ValId, target: Vec<E>, mask: Vec<bool> },
}

struct Node<E: Elem> {
    value: Tensor<E>,
    op: Op<E>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`ValId`].
pub struct Gradients<E: Elem> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Elem> Gradients<E> {
    /// Gradient of the loss w.r.t. the given value; `None` when no
    /// gradient flowed there.
    pub fn get(&self, id: ValId) -> Option<&Tensor<E>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Like `get` but materializes zeros for unreached values.
    pub fn get_or_zeros(&self, id: ValId, shape: &[usize]) -> Tensor<E> {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

pub struct Tape<E: Elem> {
    nodes: Vec<Node<E>>,
}

impl<E: Elem> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Elem> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf value (input or parameter).
    pub fn input(&mut self, value: Tensor<E>) -> ValId {
        self.push_unchecked(value, Op::Leaf)
    }

    pub fn value(&self, id: ValId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: ValId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push_unchecked(&mut self, value: Tensor<E>, op: Op<E>) -> ValId {
        self.nodes.push(Node { value, op });
        ValId(self.nodes.len() - 1)
    }

    fn push(&mut self, opname: &'static str, value: Tensor<E>, op: Op<E>) -> Result<ValId> {
        value.check_finite(opname)?;
        Ok(self.push_unchecked(value, op))
    }

    pub fn conv2d(&mut self, input: ValId, kernel: ValId, stride: usize, pad: usize) -> Result<ValId> {
        let out = conv2d_fwd(self.value(input), self.value(kernel), stride, pad)?;
        self.push("conv2d", out, Op::Conv2d { input, kernel, stride, pad })
    }

    pub fn bias_add(&mut self, input: ValId, bias: ValId) -> Result<ValId> {
        let out = bias_add_fwd(self.value(input), self.value(bias))?;
        self.push("bias_add", out, Op::BiasAdd { input, bias })
    }

    pub fn xcorr_depthwise(&mut self, template: ValId, search: ValId) -> Result<ValId> {
        let out = xcorr_depthwise_fwd(self.value(template), self.value(search))?;
        self.push("xcorr_depthwise", out, Op::Xcorr { template, search })
    }

    pub fn maxpool2(&mut self, input: ValId) -> Result<ValId> {
        let (out, argmax) = maxpool2_fwd(self.value(input))?;
        self.push("maxpool2", out, Op::MaxPool2 { input, argmax })
    }

    pub fn crop_border(&mut self, input: ValId, border: usize) -> Result<ValId> {
        if border == 0 {
            return Ok(input);
        }
        let out = crop_border_fwd(self.value(input), border)?;
        self.push("crop_border", out, Op::CropBorder { input, border })
    }

    pub fn relu(&mut self, input: ValId) -> Result<ValId> {
        let out = self.value(input).map(|v| v.maxe(E::ZERO));
        self.push("relu", out, Op::Relu { input })
    }

    pub fn exp(&mut self, input: ValId) -> Result<ValId> {
        let out = self.value(input).map(|v| v.exp());
        self.push("exp", out, Op::Exp { input })
    }

    pub fn scale(&mut self, input: ValId, c: E) -> Result<ValId> {
        let out = self.value(input).map(|v| v * c);
        self.push("scale", out, Op::Scale { input, c })
    }

    /// Elementwise add; operands must have equal shapes, or one of them
    /// must be a 1-element tensor (scalar broadcast).
    pub fn add(&mut self, a: ValId, b: ValId) -> Result<ValId> {
        let out = broadcast_binop(self.value(a), self.value(b), "add", |x, y| x + y)?;
        self.push("add", out, Op::Add { a, b })
    }

    /// Elementwise multiply with the same broadcast rule as [`Tape::add`].
    pub fn mul(&mut self, a: ValId, b: ValId) -> Result<ValId> {
        let out = broadcast_binop(self.value(a), self.value(b), "mul", |x, y| x * y)?;
        self.push("mul", out, Op::Mul { a, b })
    }

    /// Reduces to a 1-element tensor.
    pub fn sum(&mut self, input: ValId) -> Result<ValId> {
        let mut acc = E::ZERO;
        for &v in self.value(input).data() {
            acc += v;
        }
        self.push("sum", Tensor::scalar(acc), Op::Sum { input })
    }

    /// Focal classification loss, summed over all cells.
    ///
    /// Per cell with p = sigmoid(logit): positives contribute
    /// `-alpha * (1-p)^gamma * ln p`, negatives
    /// `-(1-alpha) * p^gamma * ln(1-p)`. `cls_star` must be 0/1.
    pub fn focal_loss(&mut self, logits: ValId, cls_star: &[E], gamma: E, alpha: E) -> Result<ValId> {
        let lv = self.value(logits);
        if lv.numel() != cls_star.len() {
            return Err(Error::Shape {
                op: "focal_loss",
                detail: format!("{} logits vs {} labels", lv.numel(), cls_star.len()),
            });
        }
        let mut acc = E::ZERO;
        for (&x, &c) in lv.data().iter().zip(cls_star.iter()) {
            let p = sigmoid(x);
            if c > E::from_f64(0.5) {
                // -ln p = softplus(-x)
                acc += alpha * (E::ONE - p).powf(gamma) * softplus(-x);
            } else {
                acc += (E::ONE - alpha) * p.powf(gamma) * softplus(x);
            }
        }
        self.push(
            "focal_loss",
            Tensor::scalar(acc),
            Op::Focal { logits, cls_star: cls_star.to_vec(), gamma, alpha },
        )
    }

    /// Binary cross-entropy on sigmoid logits, summed over masked cells.
    pub fn bce_masked(&mut self, logits: ValId, q_star: &[E], mask: &[bool]) -> Result<ValId> {
        let lv = self.value(logits);
        if lv.numel() != q_star.len() || lv.numel() != mask.len() {
            return Err(Error::Shape {
                op: "bce_masked",
                detail: format!(
                    "{} logits vs {} targets / {} mask",
                    lv.numel(),
                    q_star.len(),
                    mask.len()
                ),
            });
        }
        let mut acc = E::ZERO;
        for i in 0..mask.len() {
            if !mask[i] {
                continue;
            }
            let x = lv.data()[i];
            let q = q_star[i];
            acc += q * softplus(-x) + (E::ONE - q) * softplus(x);
        }
        self.push(
            "bce_masked",
            Tensor::scalar(acc),
            Op::BceMasked { logits, q_star: q_star.to_vec(), mask: mask.to_vec() },
        )
    }

    /// IoU regression loss in distance form, summed over masked cells.
    ///
    /// `dist` is `[4, n, n]` positive distances (l, t, r, b) and
    /// `dist_star` the targets in the same layout. Per cell the loss is
    /// `-ln IoU` with the IoU computed from the distance parameterization;
    /// an IoU below 1e-6 is clamped (capping the loss at `-ln 1e-6`).
    /// Returns the loss id and the number of clamped cells.
    pub fn iou_loss_masked(
        &mut self,
        dist: ValId,
        dist_star: &[E],
        mask: &[bool],
    ) -> Result<(ValId, usize)> {
        let dv = self.value(dist);
        let s = dv.shape();
        if s.len() != 3 || s[0] != 4 {
            return Err(Error::Shape {
                op: "iou_loss_masked",
                detail: format!("distances must be [4, n, n], got {:?}", s),
            });
        }
        let cells = s[1] * s[2];
        if dist_star.len() != dv.numel() || mask.len() != cells {
            return Err(Error::Shape {
                op: "iou_loss_masked",
                detail: format!(
                    "target len {} vs {} / mask len {} vs {}",
                    dist_star.len(),
                    dv.numel(),
                    mask.len(),
                    cells
                ),
            });
        }
        let mut acc = E::ZERO;
        let mut clamped = 0usize;
        let floor = E::from_f64(1e-6);
        for i in 0..cells {
            if !mask[i] {
                continue;
            }
            let (iou, _) = distance_iou(dv.data(), dist_star, cells, i);
            if iou < floor {
                clamped += 1;
                acc += -(floor.ln());
            } else {
                acc += -(iou.ln());
            }
        }
        let id = self.push(
            "iou_loss_masked",
            Tensor::scalar(acc),
            Op::IouMasked { dist, dist_star: dist_star.to_vec(), mask: mask.to_vec() },
        )?;
        Ok((id, clamped))
    }

    /// Smooth-L1 (Huber, delta 1) summed over elements where `mask` is
    /// set; `mask` is elementwise (same length as `pred`).
    pub fn smooth_l1_masked(&mut self, pred: ValId, target: &[E], mask: &[bool]) -> Result<ValId> {
        let pv = self.value(pred);
        if target.len() != pv.numel() || mask.len() != pv.numel() {
            return Err(Error::Shape {
                op: "smooth_l1_masked",
                detail: format!(
                    "{} pred vs {} target / {} mask",
                    pv.numel(),
                    target.len(),
                    mask.len()
                ),
            });
        }
        let half = E::from_f64(0.5);
        let mut acc = E::ZERO;
        for (i, (&p, &t)) in pv.data().iter().zip(target.iter()).enumerate() {
            if !mask[i] {
                continue;
            }
            let d = p - t;
            let ad = d.abs();
            acc += if ad < E::ONE { half * d * d } else { ad - half };
        }
        self.push(
            "smooth_l1_masked",
            Tensor::scalar(acc),
            Op::SmoothL1Masked { pred, target: target.to_vec(), mask: mask.to_vec() },
        )
    }

    /// Replays the tape in reverse from a scalar loss, returning the
    /// gradient accumulators for every value.
    pub fn backward(&self, loss: ValId) -> Result<Gradients<E>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Invalid {
                what: "backward target",
                detail: format!("value {} is not on this tape (len {})", loss.0, self.nodes.len()),
            });
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be scalar, shape {:?}", self.nodes[loss.0].value.shape()),
            });
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(E::ONE));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, idx: usize, g: &Tensor<E>, grads: &mut [Option<Tensor<E>>]) {
        let accumulate = |grads: &mut [Option<Tensor<E>>], id: ValId, delta: Tensor<E>| {
            match &mut grads[id.0] {
                Some(acc) => {
                    for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                        *a += *d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, stride, pad } => {
                let gi = conv2d_bwd_input(
                    g,
                    self.value(*kernel),
                    self.value(*input).shape(),
                    *stride,
                    *pad,
                );
                let gk = conv2d_bwd_kernel(
                    g,
                    self.value(*input),
                    self.value(*kernel).shape(),
                    *stride,
                    *pad,
                );
                accumulate(grads, *input, gi);
                accumulate(grads, *kernel, gk);
            }
            Op::BiasAdd { input, bias } => {
                let c = self.value(*bias).numel();
                let hw = g.numel() / c;
                let mut gb = Tensor::zeros(&[c]);
                for ch in 0..c {
                    let mut acc = E::ZERO;
                    for i in 0..hw {
                        acc += g.data()[ch * hw + i];
                    }
                    gb.data_mut()[ch] = acc;
                }
                accumulate(grads, *input, g.clone());
                accumulate(grads, *bias, gb);
            }
            Op::Xcorr { template, search } => {
                let (gt, gs) = xcorr_depthwise_bwd(g, self.value(*template), self.value(*search));
                accumulate(grads, *template, gt);
                accumulate(grads, *search, gs);
            }
            Op::MaxPool2 { input, argmax } => {
                let gi = maxpool2_bwd(g, argmax, self.value(*input).shape());
                accumulate(grads, *input, gi);
            }
            Op::CropBorder { input, border } => {
                let gi = crop_border_bwd(g, self.value(*input).shape(), *border);
                accumulate(grads, *input, gi);
            }
            Op::Relu { input } => {
                let x = self.value(*input);
                let mut gi = g.clone();
                for (gv, &xv) in gi.data_mut().iter_mut().zip(x.data()) {
                    if xv <= E::ZERO {
                        *gv = E::ZERO;
                    }
                }
                accumulate(grads, *input, gi);
            }
            Op::Exp { input } => {
                let y = &self.nodes[idx].value;
                let mut gi = g.clone();
                for (gv, &yv) in gi.data_mut().iter_mut().zip(y.data()) {
                    *gv = *gv * yv;
                }
                accumulate(grads, *input, gi);
            }
            Op::Scale { input, c } => {
                let gi = g.map(|v| v * *c);
                accumulate(grads, *input, gi);
            }
            Op::Add { a, b } => {
                for (operand, _other) in [(*a, *b), (*b, *a)] {
                    let os = self.value(operand).shape().to_vec();
                    let delta = reduce_to_shape(g, &os);
                    accumulate(grads, operand, delta);
                }
            }
            Op::Mul { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let ga_full = pointwise_with_broadcast(g, bv);
                let gb_full = pointwise_with_broadcast(g, av);
                accumulate(grads, *a, reduce_to_shape(&ga_full, av.shape()));
                accumulate(grads, *b, reduce_to_shape(&gb_full, bv.shape()));
            }
            Op::Sum { input } => {
                let gv = g.data()[0];
                let gi = Tensor::filled(self.value(*input).shape(), gv);
                accumulate(grads, *input, gi);
            }
            Op::Focal { logits, cls_star, gamma, alpha } => {
                let gv = g.data()[0];
                let lv = self.value(*logits);
                let mut gi = Tensor::zeros(lv.shape());
                for (i, (&x, &c)) in lv.data().iter().zip(cls_star.iter()).enumerate() {
                    let p = sigmoid(x);
                    let q = E::ONE - p;
                    let d = if c > E::from_f64(0.5) {
                        // d/dx [alpha * q^gamma * softplus(-x)]
                        -(*alpha) * q.powf(*gamma) * (*gamma * p * softplus(-x) + q)
                    } else {
                        (E::ONE - *alpha) * p.powf(*gamma) * (*gamma * q * softplus(x) + p)
                    };
                    gi.data_mut()[i] = gv * d;
                }
                accumulate(grads, *logits, gi);
            }
            Op::BceMasked { logits, q_star, mask } => {
                let gv = g.data()[0];
                let lv = self.value(*logits);
                let mut gi = Tensor::zeros(lv.shape());
                for i in 0..mask.len() {
                    if !mask[i] {
                        continue;
                    }
                    gi.data_mut()[i] = gv * (sigmoid(lv.data()[i]) - q_star[i]);
                }
                accumulate(grads, *logits, gi);
            }
            Op::IouMasked { dist, dist_star, mask } => {
                let gv = g.data()[0];
                let dv = self.value(*dist);
                let cells = mask.len();
                let mut gi = Tensor::zeros(dv.shape());
                let floor = E::from_f64(1e-6);
                for i in 0..cells {
                    if !mask[i] {
                        continue;
                    }
                    let (iou, parts) = distance_iou(dv.data(), dist_star, cells, i);
                    if iou < floor {
                        continue; // loss clamped to a constant here
                    }
                    // loss = ln(union) - ln(inter)
                    let DistIouParts { inter, union, iw, ih, wp, hp } = parts;
                    for ch in 0..4 {
                        let d = dv.data()[ch * cells + i];
                        let dstar = dist_star[ch * cells + i];
                        // d inter / d dist: the min picks the pred side only when pred < target
                        let dinter = if d < dstar {
                            if ch == 0 || ch == 2 {
                                ih
                            } else {
                                iw
                            }
                        } else {
                            E::ZERO
                        };
                        // d area_pred / d dist
                        let darea = if ch == 0 || ch == 2 { hp } else { wp };
                        let dunion = darea - dinter;
                        gi.data_mut()[ch * cells + i] += gv * (dunion / union - dinter / inter);
                    }
                }
                accumulate(grads, *dist, gi);
            }
            Op::SmoothL1Masked { pred, target, mask } => {
                let gv = g.data()[0];
                let pv = self.value(*pred);
                let mut gi = Tensor::zeros(pv.shape());
                for (i, (&p, &t)) in pv.data().iter().zip(target.iter()).enumerate() {
                    if !mask[i] {
                        continue;
                    }
                    let d = p - t;
                    gi.data_mut()[i] = gv
                        * if d.abs() < E::ONE {
                            d
                        } else if d > E::ZERO {
                            E::ONE
                        } else {
                            -E::ONE
                        };
                }
                accumulate(grads, *pred, gi);
            }
        }
    }
}

fn broadcast_binop<E: Elem>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    op: &'static str,
    f: impl Fn(E, E) -> E,
) -> Result<Tensor<E>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(a.shape(), data)
    } else if b.numel() == 1 {
        let y = b.data()[0];
        Ok(a.map(|x| f(x, y)))
    } else if a.numel() == 1 {
        let x = a.data()[0];
        Ok(b.map(|y| f(x, y)))
    } else {
        Err(Error::Shape {
            op,
            detail: format!(
                "shapes {:?} and {:?} are neither equal nor scalar-broadcastable",
                a.shape(),
                b.shape()
            ),
        })
    }
}

/// Multiplies the upstream gradient by `other`, broadcasting a scalar
/// `other` across the gradient.
fn pointwise_with_broadcast<E: Elem>(g: &Tensor<E>, other: &Tensor<E>) -> Tensor<E> {
    if other.numel() == 1 {
        let c = other.data()[0];
        g.map(|v| v * c)
    } else if g.numel() == 1 {
        let c = g.data()[0];
        other.map(|v| v * c)
    } else {
        let data = g.data().iter().zip(other.data()).map(|(&x, &y)| x * y).collect();
        Tensor::from_vec(g.shape(), data).expect("shapes checked at forward")
    }
}

/// Sums a gradient down to `shape` when the forward op broadcast a
/// scalar operand.
fn reduce_to_shape<E: Elem>(g: &Tensor<E>, shape: &[usize]) -> Tensor<E> {
    let want: usize = shape.iter().product();
    if want == g.numel() {
        let mut out = g.clone();
        // Reshape-only: the broadcast rules keep layouts identical.
        out = Tensor::from_vec(shape, out.into_data()).expect("same numel");
        out
    } else {
        debug_assert_eq!(want, 1);
        let mut acc = E::ZERO;
        for &v in g.data() {
            acc += v;
        }
        Tensor::from_vec(shape, vec![acc]).expect("scalar")
    }
}

#[inline]
pub fn sigmoid<E: Elem>(x: E) -> E {
    if x >= E::ZERO {
        E::ONE / (E::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::ONE + e)
    }
}

/// Numerically stable `ln(1 + exp(x))`.
#[inline]
pub fn softplus<E: Elem>(x: E) -> E {
    x.maxe(E::ZERO) + (-x.abs()).exp().ln_1p()
}

struct DistIouParts<E: Elem> {
    inter: E,
    union: E,
    iw: E,
    ih: E,
    wp: E,
    hp: E,
}

/// IoU of two boxes sharing a cell, in (l, t, r, b) distance form.
fn distance_iou<E: Elem>(
    dist: &[E],
    dist_star: &[E],
    cells: usize,
    i: usize,
) -> (E, DistIouParts<E>) {
    let l = dist[i];
    let t = dist[cells + i];
    let r = dist[2 * cells + i];
    let b = dist[3 * cells + i];
    let ls = dist_star[i];
    let ts = dist_star[cells + i];
    let rs = dist_star[2 * cells + i];
    let bs = dist_star[3 * cells + i];
    let iw = l.mine(ls) + r.mine(rs);
    let ih = t.mine(ts) + b.mine(bs);
    let inter = iw * ih;
    let wp = l + r;
    let hp = t + b;
    let area_p = wp * hp;
    let area_t = (ls + rs) * (ts + bs);
    let union = area_p + area_t - inter;
    (inter / union, DistIouParts { inter, union, iw, ih, wp, hp })
}

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug)]
pub struct FdReport {
    /// Largest normalized error `|fd - analytic| / max(1, |fd|, |analytic|)`.
    pub max_rel_err: f64,
    /// Number of coordinates checked.
    pub checked: usize,
    pub pass: bool,
}

/// Central differences against a caller-supplied analytic gradient.
///
/// `coords` limits the check to a coordinate subset (`None` = all).
pub fn finite_diff_vs(
    f: impl Fn(&Tensor<f64>) -> Result<f64>,
    x: &Tensor<f64>,
    analytic: &[f64],
    eps: f64,
    tol: f64,
    coords: Option<&[usize]>,
) -> Result<FdReport> {
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.numel()).collect();
            &all
        }
    };
    let mut max_rel = 0.0f64;
    for &i in coords {
        let mut xp = x.clone();
        xp.data_mut()[i] += eps;
        let fp = f(&xp)?;
        let mut xm = x.clone();
        xm.data_mut()[i] -= eps;
        let fm = f(&xm)?;
        let fd = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        let rel = (fd - a).abs() / 1.0f64.max(fd.abs()).max(a.abs());
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(FdReport { max_rel_err: max_rel, checked: coords.len(), pass: max_rel <= tol })
}

/// Checks the tape's backward pass for a scalar-valued function of `x`.
///
/// `build` constructs the computation from an input id to a scalar loss
/// id on the given tape; the analytic gradient comes from
/// [`Tape::backward`], the reference from central differences. Run in
/// f64 for oracle fidelity.
pub fn finite_diff_check(
    build: impl Fn(&mut Tape<f64>, ValId) -> Result<ValId>,
    x: &Tensor<f64>,
    eps: f64,
    tol: f64,
    coords: Option<&[usize]>,
) -> Result<FdReport> {
    let mut tape = Tape::new();
    let xid = tape.input(x.clone());
    let loss = build(&mut tape, xid)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.get_or_zeros(xid, x.shape());
    let eval = |xv: &Tensor<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let id = t.input(xv.clone());
        let l = build(&mut t, id)?;
        t.value(l).item()
    };
    finite_diff_vs(eval, x, analytic.data(), eps, tol, coords)
}
