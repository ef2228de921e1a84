use rand::Rng;

use crate::tensor::{Scalar, Tensor};

/// He-style uniform init: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub fn he_uniform<T: Scalar, R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, fan_in: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::random_uniform(shape, -limit, limit, rng)
}
