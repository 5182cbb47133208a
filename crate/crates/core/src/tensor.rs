//! Dense 4-D tensor in `(n, c, h, w)` row-major order.

use std::fmt;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use crate::error::{Error, Result};

/// Element type of a [`Tensor`]. Production code uses `f32`; `f64` exists
/// for finite-difference gradient checks.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// `(n, c, h, w)`.
pub type Shape = [usize; 4];

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "tensor of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(ni, ci, y, x));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// Single-image, single-channel convenience constructor.
    pub fn from_vec(data: Vec<T>) -> Self {
        Self {
            shape: [1, 1, 1, data.len()],
            data,
        }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let o = self.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// The `h × w` plane of image `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.plane_len();
        let start = (n * self.shape[1] + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.plane_len();
        let start = (n * self.shape[1] + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::invalid(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Image `i` of the batch as its own `(1, c, h, w)` tensor.
    pub fn batch_item(&self, i: usize) -> Tensor<T> {
        let per = self.shape[1] * self.plane_len();
        Tensor {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[i * per..(i + 1) * per].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("cannot stack an empty list"))?;
        let [_, c, h, w] = first.shape;
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            if t.shape[1..] != [c, h, w] {
                return Err(Error::invalid(format!(
                    "cannot stack {:?} with {:?}",
                    first.shape, t.shape
                )));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: [n, c, h, w],
            data,
        })
    }

    /// Returns a numeric error naming `what` if any element is NaN or infinite.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "{what}: non-finite value {} at flat index {i}",
                self.data[i]
            ))),
        }
    }

    /// The `h × w` spatial window whose top-left corner is `(y0, x0)`.
    pub fn window(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor<T>> {
        let [n, c, hh, ww] = self.shape;
        if y0 + h > hh || x0 + w > ww {
            return Err(Error::invalid(format!(
                "window {h}x{w} at ({y0}, {x0}) exceeds {hh}x{ww}"
            )));
        }
        Ok(Tensor::from_fn([n, c, h, w], |i, ch, y, x| {
            self.at(i, ch, y0 + y, x0 + x)
        }))
    }

    /// Extends the spatial extent to `h × w` with zeros on the bottom and
    /// right.
    pub fn pad_bottom_right(&self, h: usize, w: usize) -> Result<Tensor<T>> {
        let [n, c, hh, ww] = self.shape;
        if h < hh || w < ww {
            return Err(Error::invalid(format!(
                "cannot pad {hh}x{ww} down to {h}x{w}"
            )));
        }
        Ok(Tensor::from_fn([n, c, h, w], |i, ch, y, x| {
            if y < hh && x < ww {
                self.at(i, ch, y, x)
            } else {
                T::zero()
            }
        }))
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}
