//! Dense row-major tensor storage. Values are plain `Vec`s; gradients are
//! produced by the tape in [`super::graph`], not stored here.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::real::Real;

/// Shape/value mismatch raised by tensor constructors and graph ops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeError {
    pub context: &'static str,
    pub detail: alloc::string::String,
}

impl fmt::Display for ShapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "shape error in {}: {}", self.context, self.detail)
    }
}

impl core::error::Error for ShapeError {}

/// Row-major dense tensor. A frozen tensor is immutable and can be shared
/// across threads; the tape enforces single-writer gradient accumulation.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, ShapeError> {
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(ShapeError {
                context: "Tensor::new",
                detail: alloc::format!(
                    "shape {:?} wants {} values, got {}",
                    shape,
                    count,
                    data.len()
                ),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let count: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); count] }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let count: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; count] }
    }

    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let count: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..count).map(|i| f(i)).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Scalar extraction; panics if the tensor is not a single value.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Number of rows when viewed as 2-D (leading extent).
    pub fn rows(&self) -> usize {
        *self.shape.first().unwrap_or(&0)
    }

    /// Number of columns when viewed as 2-D (product of trailing extents).
    pub fn cols(&self) -> usize {
        if self.shape.len() <= 1 {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self, ShapeError> {
        let count: usize = shape.iter().product();
        if count != self.data.len() {
            return Err(ShapeError {
                context: "Tensor::reshaped",
                detail: alloc::format!("cannot view {:?} as {:?}", self.shape, shape),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{:?}, {:?}, ..]", self.data[0], self.data[1])
        }
    }
}
