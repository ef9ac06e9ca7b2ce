//! Dense row-major tensors and the handful of primitives the layer kernels
//! build on.
//!
//! Activations use NCHW order; convolution weights use (out, in, kH, kW).
//! There are no strided views: every tensor owns a contiguous buffer whose
//! length equals the product of its extents.

mod real;
pub mod snapshot;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub use real::{Precision, Real};

/// Tensor extents. Every extent is at least one and there is at least one
/// dimension.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::InvalidShape(dims));
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Extents of a rank-4 activation, `(batch, channels, height, width)`.
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match self.0[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::InvalidArgument(format!(
                "expected a rank-4 NCHW shape, got {:?}",
                self.0
            ))),
        }
    }

    /// Leading extent and the product of the remaining ones.
    pub fn rows_cols(&self) -> (usize, usize) {
        (self.0[0], self.0[1..].iter().product())
    }

    /// Row-major flat offset of an NCHW coordinate.
    pub fn offset4(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let d = &self.0;
        ((n * d[1] + c) * d[2] + h) * d[3] + w
    }

    /// Inverse of [`Shape::offset4`].
    pub fn coords4(&self, mut index: usize) -> [usize; 4] {
        let d = &self.0;
        let w = index % d[3];
        index /= d[3];
        let h = index % d[2];
        index /= d[2];
        let c = index % d[1];
        [index / d[1], c, h, w]
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Anything that names tensor extents.
pub trait IntoShape {
    fn into_shape(self) -> Result<Shape>;
}

impl IntoShape for Shape {
    fn into_shape(self) -> Result<Shape> {
        Ok(self)
    }
}

impl IntoShape for &Shape {
    fn into_shape(self) -> Result<Shape> {
        Ok(self.clone())
    }
}

impl IntoShape for &[usize] {
    fn into_shape(self) -> Result<Shape> {
        Shape::new(self.to_vec())
    }
}

impl IntoShape for Vec<usize> {
    fn into_shape(self) -> Result<Shape> {
        Shape::new(self)
    }
}

impl<const N: usize> IntoShape for [usize; N] {
    fn into_shape(self) -> Result<Shape> {
        Shape::new(self.to_vec())
    }
}

impl<const N: usize> IntoShape for &[usize; N] {
    fn into_shape(self) -> Result<Shape> {
        Shape::new(self.to_vec())
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: impl IntoShape, data: Vec<T>) -> Result<Self> {
        let shape = shape.into_shape()?;
        if shape.numel() != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {:?} holds {} elements but {} were supplied",
                shape,
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn filled(shape: impl IntoShape, value: T) -> Result<Self> {
        let shape = shape.into_shape()?;
        let data = vec![value; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &Shape) -> Self {
        Tensor {
            shape: shape.clone(),
            data: vec![T::zero(); shape.numel()],
        }
    }

    pub fn zeros_like(other: &Tensor<T>) -> Self {
        Self::zeros(&other.shape)
    }

    /// I.i.d. samples from N(0, stddev²).
    ///
    /// The generator is ChaCha8 seeded with `seed`, driving the ziggurat
    /// standard normal sampler of `rand_distr`; draws are made in `f64` and
    /// rounded to `T`, so f32 and f64 tensors built from the same seed agree
    /// to f32 precision.
    pub fn gaussian(shape: impl IntoShape, stddev: f64, seed: u64) -> Result<Self> {
        if !(stddev > 0.0 && stddev.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gaussian stddev must be positive and finite, got {stddev}"
            )));
        }
        let shape = shape.into_shape()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                T::of(z * stddev)
            })
            .collect();
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn reshape(self, shape: impl IntoShape) -> Result<Self> {
        let shape = shape.into_shape()?;
        if shape.numel() != self.data.len() {
            return Err(Error::shape("reshape", self.dims(), shape.dims()));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        ensure_same_shape("add_assign", self, other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .filter(|v| v.is_finite())
            .fold(0.0, |m, v| m.max(v.abs().as_f64()))
    }

    /// Copy of rows `[start, start + count)` along the leading axis.
    pub fn rows(&self, start: usize, count: usize) -> Result<Self> {
        let (n, row) = self.shape.rows_cols();
        if count == 0 || start + count > n {
            return Err(Error::InvalidArgument(format!(
                "row range {start}..{} outside 0..{n}",
                start + count
            )));
        }
        let mut dims = self.dims().to_vec();
        dims[0] = count;
        Tensor::from_vec(dims.as_slice(), self.data[start * row..(start + count) * row].to_vec())
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:?}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

pub(crate) fn ensure_same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape(op, a.dims(), b.dims()));
    }
    Ok(())
}

pub fn tensor_filled<T: Real>(shape: &[usize], value: T) -> Result<Tensor<T>> {
    Tensor::filled(shape, value)
}

pub fn gaussian_init<T: Real>(shape: &[usize], stddev: f64, seed: u64) -> Result<Tensor<T>> {
    Tensor::gaussian(shape, stddev, seed)
}

/// `alpha * x + y`.
pub fn axpy<T: Real>(alpha: T, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    ensure_same_shape("axpy", x, y)?;
    let data = x
        .data
        .iter()
        .zip(&y.data)
        .map(|(&xv, &yv)| alpha * xv + yv)
        .collect();
    Ok(Tensor {
        shape: x.shape.clone(),
        data,
    })
}

/// Σ (a_i - b_i)², summed over every element with no normalisation.
/// Accumulates in f64.
pub fn sum_sq_diff<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    ensure_same_shape("sum_sq_diff", a, b)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum())
}

/// Inner product ⟨a, b⟩ accumulated in f64.
pub fn dot<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    ensure_same_shape("dot", a, b)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| x.as_f64() * y.as_f64())
        .sum())
}
