use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

/// Per-channel normalization over every axis but the last.
#[derive(Clone, Debug)]
pub struct BatchNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct BnCache<T> {
    mode: Mode,
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    batch_mean: Vec<T>,
    batch_var: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones([channels]),
            beta: Tensor::zeros([channels]),
            running_mean: Tensor::zeros([channels]),
            running_var: Tensor::ones([channels]),
            eps: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<usize> {
        let c = self.channels();
        if x.shape().last() != Some(&c) {
            let mut expected = x.shape().to_vec();
            *expected.last_mut().unwrap() = c;
            return Err(Error::shape("batchnorm channels", &expected, x.shape()));
        }
        Ok(c)
    }

    pub(crate) fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BnCache<T>)> {
        let c = self.check(x)?;
        let eps = T::from_f64_lossy(self.eps);
        let (mean, var) = match mode {
            Mode::Train => channel_moments(x, c),
            Mode::Infer => (self.running_mean.data().to_vec(), self.running_var.data().to_vec()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let mut xhat = x.clone();
        for px in xhat.data_mut().chunks_exact_mut(c) {
            for ((v, &m), &s) in px.iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        let mut y = xhat.clone();
        let (g, b) = (self.gamma.data(), self.beta.data());
        for px in y.data_mut().chunks_exact_mut(c) {
            for ((v, &gg), &bb) in px.iter_mut().zip(g).zip(b) {
                *v = *v * gg + bb;
            }
        }
        Ok((y, BnCache { mode, xhat, inv_std, batch_mean: mean, batch_var: var }))
    }

    pub(crate) fn backward(&self, dy: &Tensor<T>, cache: &BnCache<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let c = self.check(dy)?;
        if dy.shape() != cache.xhat.shape() {
            return Err(Error::Contract("batchnorm cache does not match grad_out".into()));
        }
        let m = T::from_usize(dy.len() / c).expect("count fits");
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for (g, xh) in dy.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
            for ch in 0..c {
                dbeta[ch] += g[ch];
                dgamma[ch] += g[ch] * xh[ch];
            }
        }
        let gamma = self.gamma.data();
        let mut dx = dy.clone();
        match cache.mode {
            Mode::Infer => {
                for px in dx.data_mut().chunks_exact_mut(c) {
                    for ch in 0..c {
                        px[ch] *= gamma[ch] * cache.inv_std[ch];
                    }
                }
            }
            Mode::Train => {
                // dx = gamma * inv_std / m * (m * dy - sum(dy) - xhat * sum(dy * xhat))
                for (px, xh) in dx.data_mut().chunks_exact_mut(c).zip(cache.xhat.data().chunks_exact(c)) {
                    for ch in 0..c {
                        let scale = gamma[ch] * cache.inv_std[ch] / m;
                        px[ch] = scale * (m * px[ch] - dbeta[ch] - xh[ch] * dgamma[ch]);
                    }
                }
            }
        }
        Ok((dx, vec![Tensor::new([c], dgamma)?, Tensor::new([c], dbeta)?]))
    }

    pub(crate) fn update_running(&mut self, cache: &BnCache<T>) {
        let mom = T::from_f64_lossy(self.momentum);
        let rest = T::one() - mom;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
            *r = mom * *r + rest * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&cache.batch_var) {
            *r = mom * *r + rest * b;
        }
    }
}

/// Per-channel mean and biased variance.
fn channel_moments<T: Scalar>(x: &Tensor<T>, c: usize) -> (Vec<T>, Vec<T>) {
    let m = T::from_usize(x.len() / c).expect("count fits");
    let mut mean = vec![T::zero(); c];
    for px in x.data().chunks_exact(c) {
        for (a, &v) in mean.iter_mut().zip(px) {
            *a += v;
        }
    }
    for a in &mut mean {
        *a /= m;
    }
    let mut var = vec![T::zero(); c];
    for px in x.data().chunks_exact(c) {
        for ((a, &v), &mu) in var.iter_mut().zip(px).zip(&mean) {
            let d = v - mu;
            *a += d * d;
        }
    }
    for a in &mut var {
        *a /= m;
    }
    (mean, var)
}
