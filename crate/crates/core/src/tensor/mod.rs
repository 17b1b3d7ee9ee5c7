//! Dense rank-4 `f32` tensors and the differentiable operations built on
//! them.
//!
//! Every tensor is laid out row-major as `(n, c, h, w)`. All reductions
//! run in a pinned, single-threaded order so that identical inputs produce
//! bitwise-identical outputs on every run:
//!
//! * convolution accumulates channel-major, then row-major over the kernel
//!   window, starting from zero with the bias added last;
//! * fully-connected layers accumulate over inputs in ascending index
//!   order, bias last, which makes a 1x1 convolution on a 1x1 input
//!   reproduce a fully-connected layer bit for bit;
//! * spatial averages accumulate row-major and divide by the pixel count
//!   once at the end.
//!
//! `bilinear_resize` and `minmax_normalize` accumulate internally in f64.
//! Both are affine in their input, and the wider intermediate keeps that
//! affinity exact enough that normalizing `x` and normalizing `x + bias`
//! give the same f32 grid, which the explanation pipeline relies on.

mod ops;
pub mod t4f;

pub use ops::*;

use crate::error::{Error, Result};

/// Dense rank-4 tensor, row-major `(n, c, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Tensor4 {
    /// Builds a tensor from raw data. The data length must equal
    /// `n * c * h * w` and every dimension must be at least 1.
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::Geometry {
                op: "Tensor4::new",
                detail: format!("dimensions must be positive, got ({n}, {c}, {h}, {w})"),
            });
        }
        let want = n * c * h * w;
        if data.len() != want {
            return Err(Error::Shape {
                op: "Tensor4::new",
                expected: format!("{want} elements for ({n}, {c}, {h}, {w})"),
                actual: format!("{} elements", data.len()),
            });
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn filled(n: usize, c: usize, h: usize, w: usize, value: f32) -> Self {
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![value; n * c * h * w],
        }
    }

    /// `(n, c, h, w)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub(crate) fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: f32) {
        let i = self.offset(n, c, h, w);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// The `(h, w)` plane of one sample/channel as a contiguous slice.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let start = self.offset(n, c, 0, 0);
        &self.data[start..start + self.h * self.w]
    }

    /// Reinterprets the tensor with new dimensions of equal total size.
    pub fn reshaped(&self, n: usize, c: usize, h: usize, w: usize) -> Result<Tensor4> {
        Tensor4::new(n, c, h, w, self.data.clone())
    }

    /// Copies one sample/channel plane out as a `(1, 1, h, w)` tensor.
    pub fn extract_plane(&self, n: usize, c: usize) -> Tensor4 {
        Tensor4 {
            n: 1,
            c: 1,
            h: self.h,
            w: self.w,
            data: self.plane(n, c).to_vec(),
        }
    }

    /// Copies one sample out as a `(1, c, h, w)` tensor.
    pub fn extract_sample(&self, n: usize) -> Tensor4 {
        let per = self.c * self.h * self.w;
        Tensor4 {
            n: 1,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Stacks single-sample tensors of identical shape along the batch axis.
    pub fn stack(samples: &[Tensor4]) -> Result<Tensor4> {
        let first = samples.first().ok_or(Error::EmptyStream)?;
        let (_, c, h, w) = first.dims();
        let mut data = Vec::with_capacity(samples.len() * c * h * w);
        for s in samples {
            if s.dims() != (1, c, h, w) {
                return Err(Error::Shape {
                    op: "Tensor4::stack",
                    expected: format!("(1, {c}, {h}, {w})"),
                    actual: format!("{:?}", s.dims()),
                });
            }
            data.extend_from_slice(&s.data);
        }
        Tensor4::new(samples.len(), c, h, w, data)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f32> {
        self.data.iter()
    }

    /// Minimum element (tensors are never empty).
    pub fn min_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    /// Maximum element (tensors are never empty).
    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise map into a new tensor.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor4 {
        Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two same-shape tensors.
    pub fn zip(&self, other: &Tensor4, op: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor4> {
        self.same_shape(other, op)?;
        Ok(Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    fn same_shape(&self, other: &Tensor4, op: &'static str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape {
                op,
                expected: format!("{:?}", self.dims()),
                actual: format!("{:?}", other.dims()),
            });
        }
        Ok(())
    }
}

/// Convolution hyperparameters plus parameters.
///
/// Weights are `(out_channels, in_channels, k, k)`; the bias has one entry
/// per output channel.
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub weights: Tensor4,
    pub bias: Vec<f32>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(weights: Tensor4, bias: Vec<f32>, stride: usize, padding: usize) -> Result<Self> {
        let (oc, _ic, kh, kw) = weights.dims();
        if kh != kw {
            return Err(Error::Geometry {
                op: "ConvParams::new",
                detail: format!("kernel must be square, got {kh}x{kw}"),
            });
        }
        if stride == 0 {
            return Err(Error::Geometry {
                op: "ConvParams::new",
                detail: "stride must be at least 1".into(),
            });
        }
        if bias.len() != oc {
            return Err(Error::Shape {
                op: "ConvParams::new",
                expected: format!("bias of length {oc}"),
                actual: format!("bias of length {}", bias.len()),
            });
        }
        Ok(ConvParams {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dims().0
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dims().1
    }

    pub fn kernel(&self) -> usize {
        self.weights.dims().2
    }
}

/// Gradients produced by a parameterized backward pass.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub input_grad: Tensor4,
    pub weight_grad: Option<Tensor4>,
    pub bias_grad: Option<Vec<f32>>,
}
