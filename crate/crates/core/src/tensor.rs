//! Dense `batch × channels × height × width` tensors.
//!
//! The library is generic over the element type so that the same network code
//! runs in `f32` for training and in `f64` for gradient checking.

use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating point element type of a [`Tensor`].
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    /// Converts an `f64` literal into the element type.
    fn lit(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Four-dimensional shape in `(batch, channels, height, width)` order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
        }
    }

    pub fn numel(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    /// Number of elements in one spatial plane.
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Self { channels, ..self }
    }

    pub fn with_spatial(self, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            ..self
        }
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.channels + c) * self.height + y) * self.width + x
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

impl Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.batch, self.channels, self.height, self.width
        )
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Debug::fmt(self, f)
    }
}

/// Dense row-major tensor with an optional gradient buffer of identical shape.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        Self {
            shape,
            data: vec![value; shape.numel()],
            grad: None,
        }
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(Error::config(format!(
                "buffer of {} elements does not match shape {shape} ({} elements)",
                data.len(),
                shape.numel()
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` at every position.
    pub fn from_fn(shape: impl Into<Shape>, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.batch {
            for c in 0..shape.channels {
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Self {
            shape,
            data,
            grad: None,
        }
    }

    /// A `1×1×1×1` tensor holding `v`.
    pub fn scalar(v: T) -> Self {
        Self::full([1, 1, 1, 1], v)
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let o = self.shape.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::contract(format!(
                "item() on tensor of shape {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Gradient buffer, populated by [`crate::autodiff::Graph::backward`].
    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_tensor(&self) -> Option<Tensor<T>> {
        self.grad.as_ref().map(|g| Tensor {
            shape: self.shape,
            data: g.clone(),
            grad: None,
        })
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::contract(format!(
                "gradient of {} elements for tensor of shape {}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != self.shape.numel() {
            return Err(Error::config(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    /// Converts every element to another scalar type; gradients are dropped.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64_lossy()).unwrap_or_else(U::nan))
                .collect(),
            grad: None,
        }
    }

    /// One spatial plane `(n, c)` as a slice.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.channels + c) * p;
        &self.data[start..start + p]
    }

    /// Copies channels `[start, start + count)` into a new tensor.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        let s = self.shape;
        if start + count > s.channels {
            return Err(Error::config(format!(
                "channel slice {start}..{} out of range for {s}",
                start + count
            )));
        }
        let plane = s.plane();
        let out_shape = s.with_channels(count);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..s.batch {
            let base = (n * s.channels + start) * plane;
            data.extend_from_slice(&self.data[base..base + count * plane]);
        }
        Ok(Self {
            shape: out_shape,
            data,
            grad: None,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::config(format!(
                "shape mismatch {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
            .fold(0.0, f64::max))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64_lossy()).sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        let t = Tensor::<f32>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.at(0, 0, 1, 0), 3.0);
    }

    #[test]
    fn grad_must_match_shape() {
        let mut t = Tensor::<f64>::zeros([1, 2, 2, 2]);
        assert!(t.set_grad(vec![0.0; 7]).is_err());
        t.set_grad(vec![1.0; 8]).unwrap();
        assert_eq!(t.grad().unwrap().len(), 8);
    }

    #[test]
    fn slice_channels_by_batch() {
        let t = Tensor::<f32>::from_fn([2, 3, 1, 2], |n, c, _, x| (n * 100 + c * 10 + x) as f32);
        let s = t.slice_channels(1, 2).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 2, 1, 2));
        assert_eq!(s.data(), &[10.0, 11.0, 20.0, 21.0, 110.0, 111.0, 120.0, 121.0]);
    }
}
