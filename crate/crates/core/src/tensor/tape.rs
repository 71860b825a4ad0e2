//! Wengert-list reverse-mode differentiation.
//!
//! Every forward op appends a node holding its output value and enough of
//! its inputs to replay the adjoint. [`Tape::backward`] walks the list in
//! exact reverse order and sums adjoints into each consumed node, so fan-out
//! accumulates additively.

use std::sync::atomic::{AtomicBool, Ordering};

use super::kernels::{self, ConvGeom};
use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

static FAULT_INJECTION: AtomicBool = AtomicBool::new(false);

/// Deliberately corrupt the sigmoid adjoint (scales it by 1.5). Only meant
/// for negative-control runs of the gradient checker.
#[doc(hidden)]
pub fn set_fault_injection(on: bool) {
    FAULT_INJECTION.store(on, Ordering::SeqCst);
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Real),
    SqrtEps(Var),
    Sigmoid(Var),
    Relu(Var),
    Resize(Var),
    AvgPool {
        x: Var,
        k: usize,
        stride: usize,
        pad: usize,
    },
    GlobalAvg(Var),
    GlobalMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Softmax {
        x: Var,
        groups: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<Real>,
        inv_std: Vec<Real>,
        train: bool,
    },
    Concat(Vec<Var>),
    Narrow {
        x: Var,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    Bce {
        m: Var,
        target: Tensor,
        delta: Real,
    },
    Iou {
        m: Var,
        target: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics produced by a train-mode batch norm: per-channel mean
/// and unbiased variance, shaped `(1, C, 1, 1)`.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Tensor,
    pub var: Tensor,
}

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
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

/// Element strides of `s` when iterated under the broadcast shape `out`.
fn bstrides(s: Shape, out: Shape) -> [usize; 4] {
    let d = s.dims();
    let o = out.dims();
    let full = [d[1] * d[2] * d[3], d[2] * d[3], d[3], 1];
    let mut st = [0; 4];
    for i in 0..4 {
        st[i] = if d[i] == o[i] { full[i] } else { 0 };
    }
    st
}

/// Visit `(out_index, a_index, b_index)` over a broadcast of two shapes.
fn for_each_broadcast(a: Shape, b: Shape, out: Shape, mut f: impl FnMut(usize, usize, usize)) {
    let sa = bstrides(a, out);
    let sb = bstrides(b, out);
    let mut o = 0;
    for n in 0..out.n {
        for c in 0..out.c {
            for h in 0..out.h {
                let ia = n * sa[0] + c * sa[1] + h * sa[2];
                let ib = n * sb[0] + c * sb[1] + h * sb[2];
                for w in 0..out.w {
                    f(o, ia + w * sa[3], ib + w * sb[3]);
                    o += 1;
                }
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record an input value. Gradients are produced for it only when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Cross-correlation with zero padding. `w` is `(Cout, Cin, k, k)`,
    /// `b` (optional) is `(1, Cout, 1, 1)`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        self.conv2d_grouped(x, w, b, stride, pad, 1)
    }

    /// Grouped convolution; `groups == C` gives a depthwise convolution.
    pub fn conv2d_grouped(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if groups == 0 || xs.c % groups != 0 || ws.n % groups != 0 || ws.c * groups != xs.c {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: xs,
                rhs: ws,
            });
        }
        if ws.h != ws.w || ws.h % 2 == 0 {
            return Err(Error::invalid_shape(
                "conv2d",
                format!("kernel {ws} must be square with odd size"),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid_arg("conv2d", "stride must be positive"));
        }
        let k = ws.h;
        if xs.h + 2 * pad < k || xs.w + 2 * pad < k {
            return Err(Error::invalid_shape(
                "conv2d",
                format!("input {xs} smaller than kernel {k}x{k} with padding {pad}"),
            ));
        }
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs != Shape::new(1, ws.n, 1, 1) {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: ws,
                    rhs: bs,
                });
            }
        }
        let geom = ConvGeom {
            x: xs,
            cout: ws.n,
            k,
            stride,
            pad,
            groups,
            ho: (xs.h + 2 * pad - k) / stride + 1,
            wo: (xs.w + 2 * pad - k) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let shape = Shape::new(xs.n, geom.cout, geom.ho, geom.wo);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(
            Tensor::from_vec(shape, out)?,
            Op::Conv { x, w, b, geom },
            rg,
        ))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(Real, Real) -> Real,
    ) -> Result<(Tensor, bool)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out = Shape::broadcast(sa, sb).ok_or(Error::ShapeMismatch {
            op: name,
            lhs: sa,
            rhs: sb,
        })?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = vec![0.0; out.numel()];
        for_each_broadcast(sa, sb, out, |o, i, j| data[o] = f(va[i], vb[j]));
        Ok((Tensor::from_vec(out, data)?, self.rg(a) || self.rg(b)))
    }

    /// Broadcasting addition.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Broadcasting subtraction.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Broadcasting elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, k: Real) -> Var {
        let t = self.value(x).map(|v| v * k);
        let rg = self.rg(x);
        self.push(t, Op::Scale(x, k), rg)
    }

    /// `√(x + ε)`.
    pub fn sqrt_eps(&mut self, x: Var, eps: Real) -> Var {
        let t = self.value(x).map(|v| (v + eps).sqrt());
        let rg = self.rg(x);
        self.push(t, Op::SqrtEps(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    /// Align-corners-false bilinear resize to an explicit size.
    pub fn resize_to(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        if h == 0 || w == 0 {
            return Err(Error::invalid_shape("resize", "target size must be positive"));
        }
        let s = self.shape(x);
        if (s.h, s.w) == (h, w) {
            return Ok(x);
        }
        let data = kernels::resize_forward(self.value(x).data(), s, h, w);
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_vec(s.with_hw(h, w), data)?, Op::Resize(x), rg))
    }

    /// Bilinear resize by an integral factor; the result size must be exact.
    pub fn bilinear_resize(&mut self, x: Var, factor: usize, mode: ResizeMode) -> Result<Var> {
        if !matches!(factor, 2 | 4) {
            return Err(Error::invalid_arg(
                "bilinear_resize",
                format!("factor {factor} not in {{2, 4}}"),
            ));
        }
        let s = self.shape(x);
        let (h, w) = match mode {
            ResizeMode::Up => (s.h * factor, s.w * factor),
            ResizeMode::Down => {
                if s.h % factor != 0 || s.w % factor != 0 {
                    return Err(Error::invalid_shape(
                        "bilinear_resize",
                        format!("{}x{} is not divisible by {factor}", s.h, s.w),
                    ));
                }
                (s.h / factor, s.w / factor)
            }
        };
        self.resize_to(x, h, w)
    }

    /// Windowed mean with zero-excluded padding (divides by in-bounds taps).
    pub fn avg_pool(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let s = self.shape(x);
        if k == 0 || stride == 0 || pad >= k || s.h + 2 * pad < k || s.w + 2 * pad < k {
            return Err(Error::invalid_arg(
                "avg_pool",
                format!("window {k} stride {stride} pad {pad} does not fit {s}"),
            ));
        }
        let ho = (s.h + 2 * pad - k) / stride + 1;
        let wo = (s.w + 2 * pad - k) / stride + 1;
        let data = kernels::avg_pool_forward(self.value(x).data(), s, k, stride, pad, ho, wo);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_vec(s.with_hw(ho, wo), data)?,
            Op::AvgPool { x, k, stride, pad },
            rg,
        ))
    }

    /// Per-channel spatial mean, `(N, C, 1, 1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let data = self
            .value(x)
            .data()
            .chunks(s.plane())
            .map(|p| p.iter().sum::<Real>() / s.plane() as Real)
            .collect();
        let rg = self.rg(x);
        let t = Tensor::from_vec(s.with_hw(1, 1), data).expect("pooled shape");
        self.push(t, Op::GlobalAvg(x), rg)
    }

    /// Per-channel spatial maximum, `(N, C, 1, 1)`. Ties resolve to the
    /// first position in row-major order.
    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let mut argmax = Vec::with_capacity(s.n * s.c);
        let mut data = Vec::with_capacity(s.n * s.c);
        for p in self.value(x).data().chunks(s.plane()) {
            let (i, &m) = p
                .iter()
                .enumerate()
                .fold((0, &p[0]), |best, cur| if cur.1 > best.1 { cur } else { best });
            argmax.push(i);
            data.push(m);
        }
        let rg = self.rg(x);
        let t = Tensor::from_vec(s.with_hw(1, 1), data).expect("pooled shape");
        self.push(t, Op::GlobalMax { x, argmax }, rg)
    }

    /// Softmax over the channel axis, applied independently to each of
    /// `groups` consecutive channel groups at every pixel.
    pub fn softmax_channels(&mut self, x: Var, groups: usize) -> Result<Var> {
        let s = self.shape(x);
        if groups == 0 || s.c % groups != 0 {
            return Err(Error::invalid_arg(
                "softmax_channels",
                format!("{} channels not divisible into {groups} groups", s.c),
            ));
        }
        let gsize = s.c / groups;
        let plane = s.plane();
        let src = self.value(x).data();
        let mut out = vec![0.0; s.numel()];
        for n in 0..s.n {
            for g in 0..groups {
                let base = (n * s.c + g * gsize) * plane;
                for p in 0..plane {
                    let idx = |j: usize| base + j * plane + p;
                    let m = (0..gsize).map(|j| src[idx(j)]).fold(Real::NEG_INFINITY, Real::max);
                    let mut z = 0.0;
                    for j in 0..gsize {
                        let e = (src[idx(j)] - m).exp();
                        out[idx(j)] = e;
                        z += e;
                    }
                    for j in 0..gsize {
                        out[idx(j)] /= z;
                    }
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_vec(s, out)?, Op::Softmax { x, groups }, rg))
    }

    /// Batch normalization over `(N, H, W)` per channel. `gamma`, `beta` and
    /// the running statistics are `(1, C, 1, 1)`. In train mode the batch
    /// statistics are returned so the caller can update its running values.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor,
        running_var: &Tensor,
        train: bool,
        eps: Real,
    ) -> Result<(Var, Option<BatchStats>)> {
        let s = self.shape(x);
        let cshape = Shape::new(1, s.c, 1, 1);
        for (name, sh) in [
            ("batch_norm gamma", self.shape(gamma)),
            ("batch_norm beta", self.shape(beta)),
            ("batch_norm running_mean", running_mean.shape()),
            ("batch_norm running_var", running_var.shape()),
        ] {
            if sh != cshape {
                return Err(Error::ShapeMismatch {
                    op: name,
                    lhs: s,
                    rhs: sh,
                });
            }
        }
        if train && s.n < 2 {
            return Err(Error::BatchTooSmall(s.n));
        }
        let plane = s.plane();
        let count = (s.n * plane) as Real;
        let src = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut mean = vec![0.0; s.c];
        let mut var = vec![0.0; s.c];
        if train {
            for c in 0..s.c {
                let mut acc = 0.0;
                for n in 0..s.n {
                    let off = (n * s.c + c) * plane;
                    acc += src[off..off + plane].iter().sum::<Real>();
                }
                mean[c] = acc / count;
                let mut acc = 0.0;
                for n in 0..s.n {
                    let off = (n * s.c + c) * plane;
                    acc += src[off..off + plane]
                        .iter()
                        .map(|v| (v - mean[c]) * (v - mean[c]))
                        .sum::<Real>();
                }
                var[c] = acc / count;
            }
        } else {
            mean.copy_from_slice(running_mean.data());
            var.copy_from_slice(running_var.data());
        }
        let inv_std: Vec<Real> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; s.numel()];
        let mut out = vec![0.0; s.numel()];
        for n in 0..s.n {
            for c in 0..s.c {
                let off = (n * s.c + c) * plane;
                for i in off..off + plane {
                    xhat[i] = (src[i] - mean[c]) * inv_std[c];
                    out[i] = g[c] * xhat[i] + b[c];
                }
            }
        }
        let stats = train.then(|| {
            let unbiased = count / (count - 1.0);
            BatchStats {
                mean: Tensor::from_vec(cshape, mean).expect("channel shape"),
                var: Tensor::from_vec(cshape, var.iter().map(|v| v * unbiased).collect())
                    .expect("channel shape"),
            }
        });
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            Tensor::from_vec(s, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        );
        Ok((v, stats))
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid_arg("concat_channels", "no inputs"))?;
        let s0 = self.shape(first);
        let mut c = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    lhs: s0,
                    rhs: s,
                });
            }
            c += s.c;
        }
        let out = s0.with_c(c);
        let mut data = Vec::with_capacity(out.numel());
        for n in 0..s0.n {
            for &p in parts {
                let s = self.shape(p);
                let per = s.c * s.plane();
                data.extend_from_slice(&self.value(p).data()[n * per..(n + 1) * per]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_vec(out, data)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Channels `[start, start + len)`.
    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if len == 0 || start + len > s.c {
            return Err(Error::invalid_arg(
                "narrow_channels",
                format!("range {start}..{} outside {} channels", start + len, s.c),
            ));
        }
        let plane = s.plane();
        let mut data = Vec::with_capacity(s.n * len * plane);
        for n in 0..s.n {
            let off = (n * s.c + start) * plane;
            data.extend_from_slice(&self.value(x).data()[off..off + len * plane]);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_vec(s.with_c(len), data)?,
            Op::Narrow { x, start },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(t, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(x);
        self.push(t, Op::Mean(x), rg)
    }

    /// Mean binary cross-entropy of probabilities `m` against `target`,
    /// with `m` clamped to `[delta, 1 - delta]`.
    pub fn bce(&mut self, m: Var, target: &Tensor, delta: Real) -> Result<Var> {
        let s = self.shape(m);
        if s != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "bce_loss",
                lhs: s,
                rhs: target.shape(),
            });
        }
        let loss = self
            .value(m)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &g)| {
                let p = p.clamp(delta, 1.0 - delta);
                -(g * p.ln() + (1.0 - g) * (1.0 - p).ln())
            })
            .sum::<Real>()
            / s.numel() as Real;
        let rg = self.rg(m);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                m,
                target: target.clone(),
                delta,
            },
            rg,
        ))
    }

    /// Soft IoU loss `1 - Σmg / Σ(m + g - mg)`; zero when the union is empty.
    pub fn iou(&mut self, m: Var, target: &Tensor) -> Result<Var> {
        let s = self.shape(m);
        if s != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "iou_loss",
                lhs: s,
                rhs: target.shape(),
            });
        }
        let (inter, union) = iou_terms(self.value(m).data(), target.data());
        let loss = if union == 0.0 { 0.0 } else { 1.0 - inter / union };
        let rg = self.rg(m);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Iou {
                m,
                target: target.clone(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar loss. Returns adjoints for every node that
    /// requires gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::NonScalarLoss(ls));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(ls));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.node_adjoint(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        debug_assert_eq!(g.shape(), self.shape(v));
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reduce a broadcast-shaped adjoint back onto the operand shape.
    fn unbroadcast(&self, v: Var, out: Shape, f: impl Fn(usize, usize) -> Real) -> Tensor {
        let s = self.shape(v);
        let mut acc = vec![0.0; s.numel()];
        let st = bstrides(s, out);
        let mut o = 0;
        for n in 0..out.n {
            for c in 0..out.c {
                for h in 0..out.h {
                    let base = n * st[0] + c * st[1] + h * st[2];
                    for w in 0..out.w {
                        let i = base + w * st[3];
                        acc[i] += f(o, i);
                        o += 1;
                    }
                }
            }
        }
        Tensor::from_vec(s, acc).expect("operand shape")
    }

    fn binary_operands(&self, a: Var, b: Var, out: Shape) -> (Vec<usize>, Vec<usize>) {
        let mut ia = Vec::with_capacity(out.numel());
        let mut ib = Vec::with_capacity(out.numel());
        for_each_broadcast(self.shape(a), self.shape(b), out, |_, i, j| {
            ia.push(i);
            ib.push(j);
        });
        (ia, ib)
    }

    fn node_adjoint(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = node.value.shape();
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    geom,
                    self.rg(*x),
                    self.rg(*w),
                    b.is_some_and(|b| self.rg(b)),
                );
                if let Some(dx) = dx {
                    let t = Tensor::from_vec(self.shape(*x), dx).expect("conv dx");
                    self.accumulate(grads, *x, t);
                }
                if let Some(dw) = dw {
                    let t = Tensor::from_vec(self.shape(*w), dw).expect("conv dw");
                    self.accumulate(grads, *w, t);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    let t = Tensor::from_vec(self.shape(*b), db).expect("conv db");
                    self.accumulate(grads, *b, t);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.rg(*a) {
                    let t = self.unbroadcast(*a, out, |o, _| gd[o]);
                    self.accumulate(grads, *a, t);
                }
                if self.rg(*b) {
                    let t = self.unbroadcast(*b, out, |o, _| sign * gd[o]);
                    self.accumulate(grads, *b, t);
                }
            }
            Op::Mul(a, b) => {
                let (ia, ib) = self.binary_operands(*a, *b, out);
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    let t = self.unbroadcast(*a, out, |o, _| gd[o] * vb[ib[o]]);
                    self.accumulate(grads, *a, t);
                }
                if self.rg(*b) {
                    let t = self.unbroadcast(*b, out, |o, _| gd[o] * va[ia[o]]);
                    self.accumulate(grads, *b, t);
                }
            }
            Op::Scale(x, k) => {
                self.accumulate(grads, *x, g.map(|v| v * k));
            }
            Op::SqrtEps(x) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(g, y)| g * 0.5 / y).collect();
                self.accumulate(grads, *x, Tensor::from_vec(out, d).expect("shape"));
            }
            Op::Sigmoid(x) => {
                let k = if FAULT_INJECTION.load(Ordering::Relaxed) { 1.5 } else { 1.0 };
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(g, y)| k * g * y * (1.0 - y)).collect();
                self.accumulate(grads, *x, Tensor::from_vec(out, d).expect("shape"));
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d = gd
                    .iter()
                    .zip(xv)
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(out, d).expect("shape"));
            }
            Op::Resize(x) => {
                let s = self.shape(*x);
                let d = kernels::resize_backward(gd, s, out.h, out.w);
                self.accumulate(grads, *x, Tensor::from_vec(s, d).expect("shape"));
            }
            Op::AvgPool { x, k, stride, pad } => {
                let s = self.shape(*x);
                let d = kernels::avg_pool_backward(gd, s, *k, *stride, *pad, out.h, out.w);
                self.accumulate(grads, *x, Tensor::from_vec(s, d).expect("shape"));
            }
            Op::GlobalAvg(x) => {
                let s = self.shape(*x);
                let inv = 1.0 / s.plane() as Real;
                let mut d = Vec::with_capacity(s.numel());
                for &gv in gd {
                    d.extend(std::iter::repeat_n(gv * inv, s.plane()));
                }
                self.accumulate(grads, *x, Tensor::from_vec(s, d).expect("shape"));
            }
            Op::GlobalMax { x, argmax } => {
                let s = self.shape(*x);
                let mut d = vec![0.0; s.numel()];
                for (i, (&gv, &am)) in gd.iter().zip(argmax).enumerate() {
                    d[i * s.plane() + am] = gv;
                }
                self.accumulate(grads, *x, Tensor::from_vec(s, d).expect("shape"));
            }
            Op::Softmax { x, groups } => {
                let y = node.value.data();
                let gsize = out.c / groups;
                let plane = out.plane();
                let mut d = vec![0.0; out.numel()];
                for n in 0..out.n {
                    for gi in 0..*groups {
                        let base = (n * out.c + gi * gsize) * plane;
                        for p in 0..plane {
                            let idx = |j: usize| base + j * plane + p;
                            let dot: Real = (0..gsize).map(|j| gd[idx(j)] * y[idx(j)]).sum();
                            for j in 0..gsize {
                                d[idx(j)] = y[idx(j)] * (gd[idx(j)] - dot);
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(out, d).expect("shape"));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let plane = out.plane();
                let count = (out.n * plane) as Real;
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![0.0; out.c];
                let mut sum_gx = vec![0.0; out.c];
                for n in 0..out.n {
                    for c in 0..out.c {
                        let off = (n * out.c + c) * plane;
                        for i in off..off + plane {
                            sum_g[c] += gd[i];
                            sum_gx[c] += gd[i] * xhat[i];
                        }
                    }
                }
                let cshape = Shape::new(1, out.c, 1, 1);
                if self.rg(*gamma) {
                    let t = Tensor::from_vec(cshape, sum_gx.clone()).expect("shape");
                    self.accumulate(grads, *gamma, t);
                }
                if self.rg(*beta) {
                    let t = Tensor::from_vec(cshape, sum_g.clone()).expect("shape");
                    self.accumulate(grads, *beta, t);
                }
                if self.rg(*x) {
                    let mut d = vec![0.0; out.numel()];
                    for n in 0..out.n {
                        for c in 0..out.c {
                            let off = (n * out.c + c) * plane;
                            let k = gam[c] * inv_std[c];
                            for i in off..off + plane {
                                d[i] = if *train {
                                    k * (gd[i] - sum_g[c] / count - xhat[i] * sum_gx[c] / count)
                                } else {
                                    k * gd[i]
                                };
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_vec(out, d).expect("shape"));
                }
            }
            Op::Concat(parts) => {
                let plane = out.plane();
                let mut c0 = 0;
                for &p in parts {
                    let s = self.shape(p);
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(s.numel());
                        for n in 0..out.n {
                            let off = (n * out.c + c0) * plane;
                            d.extend_from_slice(&gd[off..off + s.c * plane]);
                        }
                        self.accumulate(grads, p, Tensor::from_vec(s, d).expect("shape"));
                    }
                    c0 += s.c;
                }
            }
            Op::Narrow { x, start } => {
                let s = self.shape(*x);
                let plane = s.plane();
                let mut d = vec![0.0; s.numel()];
                for n in 0..s.n {
                    let dst = (n * s.c + start) * plane;
                    let src = n * out.c * plane;
                    d[dst..dst + out.c * plane].copy_from_slice(&gd[src..src + out.c * plane]);
                }
                self.accumulate(grads, *x, Tensor::from_vec(s, d).expect("shape"));
            }
            Op::Sum(x) => {
                let s = self.shape(*x);
                self.accumulate(grads, *x, Tensor::full(s, gd[0]));
            }
            Op::Mean(x) => {
                let s = self.shape(*x);
                self.accumulate(grads, *x, Tensor::full(s, gd[0] / s.numel() as Real));
            }
            Op::Bce { m, target, delta } => {
                let s = self.shape(*m);
                let scale = gd[0] / s.numel() as Real;
                let d = self
                    .value(*m)
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&p, &t)| {
                        if p <= *delta || p >= 1.0 - delta {
                            0.0
                        } else {
                            -scale * (t / p - (1.0 - t) / (1.0 - p))
                        }
                    })
                    .collect();
                self.accumulate(grads, *m, Tensor::from_vec(s, d).expect("shape"));
            }
            Op::Iou { m, target } => {
                let s = self.shape(*m);
                let (inter, union) = iou_terms(self.value(*m).data(), target.data());
                let d = if union == 0.0 {
                    vec![0.0; s.numel()]
                } else {
                    target
                        .data()
                        .iter()
                        .map(|&t| -gd[0] * (t * union - inter * (1.0 - t)) / (union * union))
                        .collect()
                };
                self.accumulate(grads, *m, Tensor::from_vec(s, d).expect("shape"));
            }
        }
    }
}

/// Direction of a [`Tape::bilinear_resize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeMode {
    Up,
    Down,
}

fn sigmoid(v: Real) -> Real {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn iou_terms(m: &[Real], g: &[Real]) -> (Real, Real) {
    let mut inter = 0.0;
    let mut union = 0.0;
    for (&p, &t) in m.iter().zip(g) {
        inter += p * t;
        union += p + t - p * t;
    }
    (inter, union)
}
