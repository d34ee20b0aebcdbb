//! Dense 4-D `f32` tensors in `(n, c, h, w)` row-major order.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::CoreError;

/// Dimensions of a tensor: batch, channels, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape { n: 1, c: 1, h: 1, w: 1 };

    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of pixels in one plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub const fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &&self.data[..self.data.len().min(16)])
            .finish()
    }
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Tensor { shape, data: vec![value; shape.len()] }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor { shape: Shape::SCALAR, data: vec![value] }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self, CoreError> {
        if data.len() != shape.len() {
            return Err(CoreError::DataLength { expected: shape.len(), actual: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` at every position.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.shape.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f32) {
        let i = self.shape.index(n, c, y, x);
        self.data[i] = value;
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self, CoreError> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor, CoreError> {
        ensure_same_shape("zip_map", self.shape, other.shape)?;
        Ok(Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Sum of all elements, accumulated in `f64`.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Borrow of image `n` as a contiguous `(c, h, w)` slice.
    pub fn image(&self, n: usize) -> &[f32] {
        let len = self.shape.c * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    /// Copies image `n` out as a batch-of-one tensor.
    pub fn select(&self, n: usize) -> Tensor {
        let s = self.shape;
        Tensor { shape: Shape::new(1, s.c, s.h, s.w), data: self.image(n).to_vec() }
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor, CoreError> {
        let first = items.first().ok_or(CoreError::Empty("stack"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.len() * items.len());
        let mut n = 0;
        for t in items {
            let ts = t.shape;
            if (ts.c, ts.h, ts.w) != (s.c, s.h, s.w) {
                return Err(CoreError::ShapeMismatch { op: "stack", expected: s, actual: ts });
            }
            n += ts.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape: Shape::new(n, s.c, s.h, s.w), data })
    }

    /// Extracts the spatial window `[y, y+h) x [x, x+w)` from every plane.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Tensor, CoreError> {
        let s = self.shape;
        if x + w > s.w || y + h > s.h {
            return Err(CoreError::OutOfRange { what: "crop window", value: x.max(y), limit: s.w.min(s.h) });
        }
        let mut data = Vec::with_capacity(s.n * s.c * w * h);
        for n in 0..s.n {
            for c in 0..s.c {
                for yy in y..y + h {
                    let start = s.index(n, c, yy, x);
                    data.extend_from_slice(&self.data[start..start + w]);
                }
            }
        }
        Ok(Tensor { shape: Shape::new(s.n, s.c, h, w), data })
    }
}

pub(crate) fn ensure_same_shape(op: &'static str, expected: Shape, actual: Shape) -> Result<(), CoreError> {
    if expected != actual {
        return Err(CoreError::ShapeMismatch { op, expected, actual });
    }
    Ok(())
}
