use super::{gemm, Scalar, Tensor};
use crate::error::{Error, Result};

/// `input[N, D] * weights[D, M] + bias[M]`.
pub fn dense<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: Option<&[T]>) -> Result<Tensor<T>> {
    let [n, d] = input.dims2("dense input")?;
    let [wd, m] = weights.dims2("dense weights")?;
    if wd != d {
        return Err(Error::shape("dense inner dimension", &[d, m], weights.shape()));
    }
    if let Some(b) = bias {
        if b.len() != m {
            return Err(Error::shape("dense bias", &[m], &[b.len()]));
        }
    }
    let mut out = vec![T::zero(); n * m];
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(m) {
            row.copy_from_slice(b);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    gemm(n, d, m, input.data(), false, weights.data(), false, beta, &mut out);
    Tensor::new([n, m], out)
}

#[derive(Clone, Debug)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let [n, d] = input.dims2("dense backward input")?;
    let [_, m] = weights.dims2("dense backward weights")?;
    if grad_out.shape() != [n, m] {
        return Err(Error::shape("dense backward grad_out", &[n, m], grad_out.shape()));
    }
    let dy = grad_out.data();
    let mut dw = vec![T::zero(); d * m];
    gemm(d, n, m, input.data(), true, dy, false, T::zero(), &mut dw);
    let mut dx = vec![T::zero(); n * d];
    gemm(n, m, d, dy, false, weights.data(), true, T::zero(), &mut dx);
    let mut db = vec![T::zero(); m];
    for row in dy.chunks_exact(m) {
        for (a, &v) in db.iter_mut().zip(row) {
            *a += v;
        }
    }
    Ok(DenseGrads { input: Tensor::new([n, d], dx)?, weights: Tensor::new([d, m], dw)?, bias: db })
}
