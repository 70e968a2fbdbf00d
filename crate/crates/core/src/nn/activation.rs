use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// Half-wave rectifier `max(x, 0)`.
pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Takes the forward *output*; the derivative at exactly 0 is 0.
pub fn relu_backward<T: Element>(grad_y: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    grad_y.expect_shape(y.shape())?;
    let data = grad_y
        .data()
        .iter()
        .zip(y.data())
        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(y.shape().to_vec(), data)
}

/// Hyperbolic tangent, kept strictly inside (−1, 1): large inputs that
/// round to ±1 are pulled in to the nearest float below one.
pub fn tanh_op<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let limit = T::one() - T::epsilon() / T::of(2.0);
    x.map(|v| {
        let t = v.tanh();
        if t > limit {
            limit
        } else if t < -limit {
            -limit
        } else {
            t
        }
    })
}

/// Takes the forward *output*: `grad_x = (1 − y²)·grad_y`.
pub fn tanh_backward<T: Element>(grad_y: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    grad_y.expect_shape(y.shape())?;
    let data = grad_y
        .data()
        .iter()
        .zip(y.data())
        .map(|(&g, &v)| (T::one() - v * v) * g)
        .collect();
    Tensor::new(y.shape().to_vec(), data)
}
