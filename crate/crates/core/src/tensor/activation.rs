use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
    Relu6,
    /// Over the last axis.
    Softmax,
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Relu6 => "relu6",
            ActivationKind::Softmax => "softmax",
        }
    }
}

pub fn activation<T: Scalar>(input: &Tensor<T>, kind: ActivationKind) -> Tensor<T> {
    match kind {
        ActivationKind::Relu => input.map(|v| v.max(T::zero())),
        ActivationKind::Relu6 => {
            let six = T::from_f64_lossy(6.0);
            input.map(|v| v.max(T::zero()).min(six))
        }
        ActivationKind::Softmax => softmax_rows(input),
    }
}

/// Numerically stable softmax over the last axis.
pub fn softmax_rows<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let k = *input.shape().last().expect("rank >= 1");
    let mut out = input.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Gradient with respect to the activation input.
///
/// `input` is needed for the piecewise-linear kinds, `output` for softmax.
pub fn activation_backward<T: Scalar>(
    kind: ActivationKind,
    input: &Tensor<T>,
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.shape() != input.shape() {
        return Err(Error::shape("activation backward", input.shape(), grad_out.shape()));
    }
    let mut dx = grad_out.clone();
    match kind {
        ActivationKind::Relu => {
            for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
                if x <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        ActivationKind::Relu6 => {
            let six = T::from_f64_lossy(6.0);
            for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
                if x <= T::zero() || x >= six {
                    *d = T::zero();
                }
            }
        }
        ActivationKind::Softmax => {
            let k = *input.shape().last().expect("rank >= 1");
            for (d, y) in dx.data_mut().chunks_exact_mut(k).zip(output.data().chunks_exact(k)) {
                let dot: T = d.iter().zip(y).map(|(&g, &p)| g * p).sum();
                for (g, &p) in d.iter_mut().zip(y) {
                    *g = p * (*g - dot);
                }
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor<f32> {
        Tensor::new([1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn relu_definition() {
        assert_eq!(activation(&t(&[-1.0, 0.0, 2.0]), ActivationKind::Relu).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu6_definition() {
        assert_eq!(activation(&t(&[7.0, 3.0, -1.0]), ActivationKind::Relu6).data(), &[6.0, 3.0, 0.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        assert_eq!(activation(&t(&[0.0; 4]), ActivationKind::Softmax).data(), &[0.25; 4]);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let y = softmax_rows(&t(&[1000.0, 1000.0, -1000.0]));
        assert!(y.is_finite());
        assert!((y.data()[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn relu_backward_kills_negative_inputs() {
        let x = t(&[-3.0]);
        let y = activation(&x, ActivationKind::Relu);
        let dx = activation_backward(ActivationKind::Relu, &x, &y, &t(&[42.0])).unwrap();
        assert_eq!(dx.data(), &[0.0]);
    }
}
