//! Dense rank-4 tensors and the reverse-mode tape that differentiates them.
//!
//! [`Tensor`] is a plain value: an `(N, C, H, W)` shape and row-major data.
//! Differentiation happens on a [`Tape`], which owns every value produced
//! during a forward pass and replays the adjoints in reverse order.

mod gradcheck;
pub(crate) mod kernels;
mod tape;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gradcheck::{grad_check, rel_error, GradCheckReport, GradCheckSpec};
pub use tape::{set_fault_injection, BatchStats, Gradients, ResizeMode, Tape, Var};

/// Engine scalar. 64-bit unless the `f32` feature is enabled.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Numeric precision the engine was compiled with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub const COMPILED: Precision = if std::mem::size_of::<Real>() == 8 {
        Precision::F64
    } else {
        Precision::F32
    };
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// `(batch, channels, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub const fn from_dims(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn with_hw(self, h: usize, w: usize) -> Self {
        Shape { h, w, ..self }
    }

    pub fn with_c(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    /// Broadcast two shapes: each axis must agree or be 1 on one side.
    pub fn broadcast(a: Shape, b: Shape) -> Option<Shape> {
        let mut out = [0; 4];
        for (i, (x, y)) in a.dims().into_iter().zip(b.dims()).enumerate() {
            out[i] = match (x, y) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return None,
            };
        }
        Some(Shape::from_dims(out))
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major `(N, C, H, W)` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<Real>,
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<Real>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::invalid_shape(
                "Tensor::from_vec",
                format!("{} values do not fill shape {shape}", data.len()),
            ));
        }
        if shape.numel() == 0 {
            return Err(Error::invalid_shape(
                "Tensor::from_vec",
                format!("shape {shape} has a zero extent"),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: Shape) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: Shape, value: Real) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn scalar(value: Real) -> Self {
        Tensor::full(Shape::scalar(), value)
    }

    /// Build from a function of `(n, c, h, w)`.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> Real) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    /// Uniform draws in `[lo, hi)`.
    pub fn uniform(shape: Shape, lo: Real, hi: Real, rng: &mut impl Rng) -> Self {
        let data = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor { shape, data }
    }

    /// Standard normal draws (Box-Muller).
    pub fn randn(shape: Shape, rng: &mut impl Rng) -> Self {
        let data = (0..shape.numel())
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen();
                ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as Real
            })
            .collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + h) * s.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> Real {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: Real) {
        let i = self.index(n, c, h, w);
        self.data[i] = v;
    }

    /// Single value of a `(1,1,1,1)` tensor.
    pub fn item(&self) -> Real {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(self, shape: Shape) -> Result<Tensor> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> Real {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> Real {
        self.sum() / self.numel() as Real
    }

    pub fn max_abs(&self) -> Real {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Batch item `n` as a `(1, C, H, W)` tensor.
    pub fn batch_item(&self, n: usize) -> Tensor {
        let per = self.shape.c * self.shape.plane();
        Tensor {
            shape: Shape { n: 1, ..self.shape },
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Stack `(1, C, H, W)` items along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid_arg("Tensor::stack", "no items"))?
            .shape;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut n = 0;
        for t in items {
            if t.shape.c != first.c || t.shape.h != first.h || t.shape.w != first.w {
                return Err(Error::ShapeMismatch {
                    op: "Tensor::stack",
                    lhs: first,
                    rhs: t.shape,
                });
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: Shape { n, ..first },
            data,
        })
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Tensor) -> Real {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shapes differ");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Bilinear resize of every plane (align-corners false, edge clamped).
    pub fn resized(&self, h: usize, w: usize) -> Tensor {
        if (h, w) == (self.shape.h, self.shape.w) {
            return self.clone();
        }
        Tensor {
            shape: self.shape.with_hw(h, w),
            data: kernels::resize_forward(&self.data, self.shape, h, w),
        }
    }

    /// Nearest-neighbour resize of every plane, sampling pixel centres.
    pub fn resized_nearest(&self, h: usize, w: usize) -> Tensor {
        let s = self.shape;
        let pick = |o: usize, out: usize, inp: usize| (((o as f64 + 0.5) * inp as f64 / out as f64) as usize).min(inp - 1);
        let ys: Vec<usize> = (0..h).map(|y| pick(y, h, s.h)).collect();
        let xs: Vec<usize> = (0..w).map(|x| pick(x, w, s.w)).collect();
        let mut data = Vec::with_capacity(s.n * s.c * h * w);
        for plane in self.data.chunks(s.plane()) {
            for &y in &ys {
                data.extend(xs.iter().map(|&x| plane[y * s.w + x]));
            }
        }
        Tensor {
            shape: s.with_hw(h, w),
            data,
        }
    }
}

#[cfg(test)]
mod tests;
