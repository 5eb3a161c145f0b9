use super::{Real, Tensor};
use crate::error::{Result, StanError};

/// A trainable tensor with its accumulated gradient.
///
/// Gradients only change through [`ParamTensor::accumulate`] and are only
/// cleared by [`ParamTensor::zero_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T: Real = f32> {
    pub name: String,
    pub value: Tensor<T>,
    grad: Tensor<T>,
}

impl<T: Real> ParamTensor<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn grad(&self) -> &Tensor<T> {
        &self.grad
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
    }

    /// `grad += scale * delta`.
    pub fn accumulate(&mut self, delta: &Tensor<T>, scale: T) -> Result<()> {
        if delta.shape() != self.value.shape() {
            return Err(StanError::dim("ParamTensor::accumulate", self.shape(), delta.shape()));
        }
        for (g, &d) in self.grad.data_mut().iter_mut().zip(delta.data()) {
            *g = *g + scale * d;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamTensor<U> {
        ParamTensor {
            name: self.name.clone(),
            value: self.value.cast(),
            grad: self.grad.cast(),
        }
    }
}
