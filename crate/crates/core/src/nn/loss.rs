use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Floor applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct CrossEntropy<T> {
    /// Mean negative log-likelihood of the true class.
    pub loss: f64,
    /// Fused softmax + cross-entropy gradient with respect to the logits,
    /// `(probs - labels) / N`.
    pub grad_logits: Tensor<T>,
}

fn validate<T: Scalar>(probs: &Tensor<T>, labels: &Tensor<T>) -> Result<(usize, usize, Vec<usize>)> {
    let [n, k] = probs.dims2("cross_entropy probs")?;
    if labels.shape() != probs.shape() {
        return Err(Error::shape("cross_entropy labels", probs.shape(), labels.shape()));
    }
    let mut truth = Vec::with_capacity(n);
    for (row, (p, l)) in probs.data().chunks_exact(k).zip(labels.data().chunks_exact(k)).enumerate() {
        let sum: f64 = p.iter().map(|v| v.to_f64().unwrap()).sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(Error::Contract(format!("probability row {row} sums to {sum}, not 1")));
        }
        let hot: Vec<usize> = l.iter().enumerate().filter(|(_, &v)| v != T::zero()).map(|(i, _)| i).collect();
        match hot[..] {
            [i] if l[i] == T::one() => truth.push(i),
            [] => return Err(Error::Label(format!("row {row} has no true class"))),
            _ => return Err(Error::Label(format!("row {row} is not a one-hot label"))),
        }
    }
    Ok((n, k, truth))
}

/// Categorical cross-entropy of softmax probabilities against one-hot labels.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &Tensor<T>) -> Result<CrossEntropy<T>> {
    let (n, k, truth) = validate(probs, labels)?;
    let mut loss = 0.0;
    for (row, &t) in truth.iter().enumerate() {
        let p = probs.data()[row * k + t].to_f64().unwrap().max(PROB_FLOOR);
        loss -= p.ln();
    }
    let inv_n = T::from_usize(n).unwrap().recip();
    let mut grad = probs.clone();
    for (g, &l) in grad.data_mut().iter_mut().zip(labels.data()) {
        *g = (*g - l) * inv_n;
    }
    Ok(CrossEntropy { loss: loss / n as f64, grad_logits: grad })
}

/// Gradient of the mean cross-entropy with respect to the probabilities
/// themselves: `-labels / (N * max(p, floor))`.
pub fn cross_entropy_prob_grad<T: Scalar>(probs: &Tensor<T>, labels: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, _, _) = validate(probs, labels)?;
    let floor = T::from_f64_lossy(PROB_FLOOR);
    let n = T::from_usize(n).unwrap();
    let mut grad = labels.clone();
    for (g, &p) in grad.data_mut().iter_mut().zip(probs.data()) {
        *g = -*g / (n * p.max(floor));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let p = Tensor::<f64>::new([2, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(cross_entropy(&p, &p).unwrap().loss, 0.0);
    }

    #[test]
    fn uniform_four_way_is_ln4() {
        let p = Tensor::<f64>::full([3, 4], 0.25);
        let l = Tensor::<f64>::new([3, 4], vec![1., 0., 0., 0., 0., 0., 1., 0., 0., 1., 0., 0.]).unwrap();
        let ce = cross_entropy(&p, &l).unwrap();
        assert!((ce.loss - 4f64.ln()).abs() < 1e-12);
        assert!((ce.loss - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn confident_wrong_prediction_stays_finite() {
        let p = Tensor::<f32>::new([1, 2], vec![1.0, 0.0]).unwrap();
        let l = Tensor::<f32>::new([1, 2], vec![0.0, 1.0]).unwrap();
        let ce = cross_entropy(&p, &l).unwrap();
        assert!((ce.loss - PROB_FLOOR.ln().abs()).abs() < 1e-9);
    }

    #[test]
    fn unnormalized_row_is_contract_error() {
        let p = Tensor::<f32>::new([1, 2], vec![0.7, 0.7]).unwrap();
        let l = Tensor::<f32>::new([1, 2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(cross_entropy(&p, &l), Err(Error::Contract(_))));
    }

    #[test]
    fn missing_label_is_label_error() {
        let p = Tensor::<f32>::new([1, 2], vec![0.5, 0.5]).unwrap();
        let l = Tensor::<f32>::zeros([1, 2]);
        assert!(matches!(cross_entropy(&p, &l), Err(Error::Label(_))));
    }
}
