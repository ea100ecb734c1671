//! A plain linear layer: weight (in, out) and bias (out,).

use crate::numerics::rng::Rng;
use crate::numerics::tensor::Tensor;
use crate::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T: Real> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> Dense<T> {
    /// Kaiming-style init over the fan-in, zero bias.
    pub fn init(d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        let scale = T::lit((2.0 / d_in as f64).sqrt());
        Dense {
            w: Tensor::from_fn(&[d_in, d_out], |_| scale * rng.normal::<T>()),
            b: Tensor::zeros(&[d_out]),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Dense { w: Tensor::zeros(&[d_in, d_out]), b: Tensor::zeros(&[d_out]) }
    }

    pub fn d_in(&self) -> usize {
        self.w.rows()
    }

    pub fn d_out(&self) -> usize {
        self.w.cols()
    }
}
