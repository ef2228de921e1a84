//! Trainable layers with explicit forward/backward contracts.
//!
//! A layer's `forward` is pure: it returns the output together with a
//! [`ForwardCache`] holding whatever `backward` needs. Batch-norm running
//! statistics are the only mutable state and are folded in separately via
//! [`Layer::update_running_stats`].

mod batchnorm;
mod gradcheck;
mod init;
mod layers;
mod loss;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ActivationKind, PoolIndices, Scalar, Tensor};

pub use batchnorm::{BatchNorm, BN_EPSILON, BN_MOMENTUM};
pub use gradcheck::{grad_check, GradCheckLoss, GradCheckReport};
pub use init::he_uniform;
pub use layers::{Conv, Dense, DepthwiseConv, Dropout, MaxPool, SeparableConv};
pub use loss::{cross_entropy, cross_entropy_prob_grad, CrossEntropy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Per-call forward settings. `seed` keys the dropout mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardCtx {
    pub mode: Mode,
    pub seed: u64,
}

impl ForwardCtx {
    pub fn train(seed: u64) -> Self {
        Self { mode: Mode::Train, seed }
    }

    pub fn infer() -> Self {
        Self { mode: Mode::Infer, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    DepthwiseConv,
    SeparableConv,
    MaxPool,
    Dense,
    Flatten,
    Dropout,
    BatchNorm,
    Activation,
    ResidualAdd,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::DepthwiseConv => "depthwise_conv",
            LayerKind::SeparableConv => "separable_conv",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Dense => "dense",
            LayerKind::Flatten => "flatten",
            LayerKind::Dropout => "dropout",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Activation => "activation",
            LayerKind::ResidualAdd => "residual_add",
        }
    }

    /// Layers whose learned parameters include a spatial or channel-mixing
    /// kernel.
    pub fn is_conv_like(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::DepthwiseConv | LayerKind::SeparableConv)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub enum Layer<T: Scalar = f32> {
    Conv(Conv<T>),
    DepthwiseConv(DepthwiseConv<T>),
    SeparableConv(SeparableConv<T>),
    MaxPool(MaxPool),
    Dense(Dense<T>),
    Flatten,
    Dropout(Dropout),
    BatchNorm(BatchNorm<T>),
    Activation(ActivationKind),
    ResidualAdd,
}

/// Whatever a layer's backward pass needs from its forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    kind: LayerKind,
    mode: Mode,
    inputs: Vec<Arc<Tensor<T>>>,
    output_shape: Vec<usize>,
    extra: CacheExtra<T>,
}

#[derive(Clone, Debug)]
pub(crate) enum CacheExtra<T> {
    None,
    Output(Arc<Tensor<T>>),
    Pool(PoolIndices),
    Mask(Vec<T>),
    Intermediate(Tensor<T>),
    BatchNorm(batchnorm::BnCache<T>),
}

impl<T: Scalar> ForwardCache<T> {
    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }
}

/// Gradients produced by one backward call, in input and parameter order.
#[derive(Clone, Debug)]
pub struct LayerGrads<T> {
    pub inputs: Vec<Tensor<T>>,
    pub params: Vec<Tensor<T>>,
}

/// A named, borrowed parameter or buffer.
pub struct NamedTensor<'a, T> {
    pub name: &'static str,
    pub tensor: &'a Tensor<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::DepthwiseConv(_) => LayerKind::DepthwiseConv,
            Layer::SeparableConv(_) => LayerKind::SeparableConv,
            Layer::MaxPool(_) => LayerKind::MaxPool,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Dropout(_) => LayerKind::Dropout,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Activation(_) => LayerKind::Activation,
            Layer::ResidualAdd => LayerKind::ResidualAdd,
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Layer::ResidualAdd => 2,
            _ => 1,
        }
    }

    /// Short description for reports, e.g. `conv 3x3/1 64 same`.
    pub fn describe(&self) -> String {
        match self {
            Layer::Conv(l) => format!(
                "conv {}x{}/{} {} {}",
                l.spec.kernel_h,
                l.spec.kernel_w,
                l.spec.stride,
                l.spec.out_channels,
                padding_name(l.spec.padding)
            ),
            Layer::DepthwiseConv(l) => format!(
                "depthwise_conv {}x{}/{} {}",
                l.spec.kernel_h,
                l.spec.kernel_w,
                l.spec.stride,
                padding_name(l.spec.padding)
            ),
            Layer::SeparableConv(l) => format!(
                "separable_conv {}x{}/{} {} {}",
                l.spec.kernel_h,
                l.spec.kernel_w,
                l.spec.stride,
                l.spec.out_channels,
                padding_name(l.spec.padding)
            ),
            Layer::MaxPool(l) => format!("maxpool {}x{}/{} {}", l.size, l.size, l.stride, padding_name(l.padding)),
            Layer::Dense(l) => format!("dense {}", l.weights.shape()[1]),
            Layer::Flatten => "flatten".into(),
            Layer::Dropout(l) => format!("dropout {}", l.p()),
            Layer::BatchNorm(_) => "batchnorm".into(),
            Layer::Activation(k) => k.name().into(),
            Layer::ResidualAdd => "residual_add".into(),
        }
    }

    /// Trainable parameters, in declared order.
    pub fn params(&self) -> Vec<NamedTensor<'_, T>> {
        let mut out = Vec::new();
        let mut push = |name, tensor| out.push(NamedTensor { name, tensor });
        match self {
            Layer::Conv(l) => {
                push("kernel", &l.kernel);
                if let Some(b) = &l.bias {
                    push("bias", b);
                }
            }
            Layer::DepthwiseConv(l) => {
                push("depthwise_kernel", &l.kernel);
                if let Some(b) = &l.bias {
                    push("bias", b);
                }
            }
            Layer::SeparableConv(l) => {
                push("depthwise_kernel", &l.depthwise);
                push("pointwise_kernel", &l.pointwise);
                if let Some(b) = &l.bias {
                    push("bias", b);
                }
            }
            Layer::Dense(l) => {
                push("kernel", &l.weights);
                push("bias", &l.bias);
            }
            Layer::BatchNorm(l) => {
                push("gamma", &l.gamma);
                push("beta", &l.beta);
            }
            _ => {}
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv(l) => std::iter::once(&mut l.kernel).chain(l.bias.as_mut()).collect(),
            Layer::DepthwiseConv(l) => std::iter::once(&mut l.kernel).chain(l.bias.as_mut()).collect(),
            Layer::SeparableConv(l) => {
                [&mut l.depthwise, &mut l.pointwise].into_iter().chain(l.bias.as_mut()).collect()
            }
            Layer::Dense(l) => vec![&mut l.weights, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<NamedTensor<'_, T>> {
        match self {
            Layer::BatchNorm(l) => vec![
                NamedTensor { name: "moving_mean", tensor: &l.running_mean },
                NamedTensor { name: "moving_variance", tensor: &l.running_var },
            ],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::BatchNorm(l) => vec![&mut l.running_mean, &mut l.running_var],
            _ => Vec::new(),
        }
    }

    /// Parameters then buffers, mutably; the order of `params` + `buffers`.
    pub fn state_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta, &mut l.running_mean, &mut l.running_var],
            other => other.params_mut(),
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.params().iter().map(|p| p.tensor.len()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.trainable_count() + self.buffers().iter().map(|p| p.tensor.len()).sum::<usize>()
    }

    /// Per-sample output shape for per-sample input shapes (no batch axis).
    pub fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        if inputs.len() != self.arity() {
            return Err(Error::Contract(format!(
                "{} takes {} input(s), got {}",
                self.kind(),
                self.arity(),
                inputs.len()
            )));
        }
        let first = inputs[0];
        let hwc = |ctx: &str| -> Result<[usize; 3]> {
            match *first {
                [h, w, c] => Ok([h, w, c]),
                _ => Err(Error::Shape {
                    context: format!("{ctx} expects an HxWxC input"),
                    expected: vec![],
                    actual: first.to_vec(),
                }),
            }
        };
        match self {
            Layer::Conv(l) => {
                let [h, w, c] = hwc("conv")?;
                if c != l.spec.in_channels {
                    return Err(Error::shape("conv input channels", &[h, w, l.spec.in_channels], first));
                }
                let (oh, ow, _, _) = l.spec.output_hw(h, w)?;
                Ok(vec![oh, ow, l.spec.out_channels])
            }
            Layer::DepthwiseConv(l) => {
                let [h, w, c] = hwc("depthwise_conv")?;
                if c != l.spec.in_channels {
                    return Err(Error::shape("depthwise_conv input channels", &[h, w, l.spec.in_channels], first));
                }
                let (oh, ow, _, _) = l.spec.output_hw(h, w)?;
                Ok(vec![oh, ow, c])
            }
            Layer::SeparableConv(l) => {
                let [h, w, c] = hwc("separable_conv")?;
                if c != l.spec.in_channels {
                    return Err(Error::shape("separable_conv input channels", &[h, w, l.spec.in_channels], first));
                }
                let (oh, ow, _, _) = l.spec.output_hw(h, w)?;
                Ok(vec![oh, ow, l.spec.out_channels])
            }
            Layer::MaxPool(l) => {
                let [h, w, c] = hwc("maxpool")?;
                let (oh, _) = crate::tensor::ConvSpec::axis(h, l.size, l.stride, l.padding)?;
                let (ow, _) = crate::tensor::ConvSpec::axis(w, l.size, l.stride, l.padding)?;
                Ok(vec![oh, ow, c])
            }
            Layer::Dense(l) => {
                let d = l.weights.shape()[0];
                if first != [d] {
                    return Err(Error::shape("dense input", &[d], first));
                }
                Ok(vec![l.weights.shape()[1]])
            }
            Layer::Flatten => Ok(vec![first.iter().product()]),
            Layer::BatchNorm(l) => {
                let c = l.gamma.len();
                if first.last() != Some(&c) {
                    return Err(Error::shape("batchnorm channels", &[c], first));
                }
                Ok(first.to_vec())
            }
            Layer::Dropout(_) | Layer::Activation(_) => Ok(first.to_vec()),
            Layer::ResidualAdd => {
                if inputs[0] != inputs[1] {
                    return Err(Error::shape("residual_add branches", inputs[0], inputs[1]));
                }
                Ok(first.to_vec())
            }
        }
    }

    pub fn forward(&self, inputs: &[Arc<Tensor<T>>], ctx: &ForwardCtx) -> Result<(Arc<Tensor<T>>, ForwardCache<T>)> {
        if inputs.len() != self.arity() {
            return Err(Error::Contract(format!(
                "{} takes {} input(s), got {}",
                self.kind(),
                self.arity(),
                inputs.len()
            )));
        }
        let x = &inputs[0];
        let (output, extra) = match self {
            Layer::Conv(l) => (l.forward(x)?, CacheExtra::None),
            Layer::DepthwiseConv(l) => (l.forward(x)?, CacheExtra::None),
            Layer::SeparableConv(l) => {
                let (y, mid) = l.forward(x)?;
                (y, CacheExtra::Intermediate(mid))
            }
            Layer::MaxPool(l) => {
                let (y, idx) = l.forward(x)?;
                (y, CacheExtra::Pool(idx))
            }
            Layer::Dense(l) => (l.forward(x)?, CacheExtra::None),
            Layer::Flatten => {
                let n = x.batch();
                ((**x).clone().reshape([n, x.item_len()])?, CacheExtra::None)
            }
            Layer::Dropout(l) => match l.forward(x, ctx)? {
                (y, Some(mask)) => (y, CacheExtra::Mask(mask)),
                (y, None) => (y, CacheExtra::None),
            },
            Layer::BatchNorm(l) => {
                let (y, cache) = l.forward(x, ctx.mode)?;
                (y, CacheExtra::BatchNorm(cache))
            }
            Layer::Activation(kind) => {
                let y = Arc::new(crate::tensor::activation(x, *kind));
                let cache = ForwardCache {
                    kind: LayerKind::Activation,
                    mode: ctx.mode,
                    inputs: inputs.to_vec(),
                    output_shape: y.shape().to_vec(),
                    extra: CacheExtra::Output(y.clone()),
                };
                return Ok((y, cache));
            }
            Layer::ResidualAdd => {
                let mut y = (**x).clone();
                y.add_assign(&inputs[1])?;
                (y, CacheExtra::None)
            }
        };
        let cache = ForwardCache {
            kind: self.kind(),
            mode: ctx.mode,
            inputs: inputs.to_vec(),
            output_shape: output.shape().to_vec(),
            extra,
        };
        Ok((Arc::new(output), cache))
    }

    /// Convenience for single-input layers.
    pub fn forward_one(&self, input: Tensor<T>, ctx: &ForwardCtx) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let (y, cache) = self.forward(&[Arc::new(input)], ctx)?;
        Ok((Arc::unwrap_or_clone(y), cache))
    }

    pub fn backward(&self, grad_out: &Tensor<T>, cache: &ForwardCache<T>) -> Result<LayerGrads<T>> {
        if cache.kind != self.kind() {
            return Err(Error::Contract(format!(
                "backward of {} given a cache produced by {}",
                self.kind(),
                cache.kind
            )));
        }
        if grad_out.shape() != cache.output_shape.as_slice() {
            return Err(Error::Contract(format!(
                "stale cache for {}: grad_out {:?} but forward produced {:?}",
                self.kind(),
                grad_out.shape(),
                cache.output_shape
            )));
        }
        let x = &cache.inputs[0];
        let stale = || Error::Contract(format!("cache for {} lacks forward state", self.kind()));
        let single = |dx: Tensor<T>, params: Vec<Tensor<T>>| LayerGrads { inputs: vec![dx], params };
        Ok(match self {
            Layer::Conv(l) => {
                let (dx, params) = l.backward(x, grad_out)?;
                single(dx, params)
            }
            Layer::DepthwiseConv(l) => {
                let (dx, params) = l.backward(x, grad_out)?;
                single(dx, params)
            }
            Layer::SeparableConv(l) => {
                let CacheExtra::Intermediate(mid) = &cache.extra else { return Err(stale()) };
                let (dx, params) = l.backward(x, mid, grad_out)?;
                single(dx, params)
            }
            Layer::MaxPool(_) => {
                let CacheExtra::Pool(idx) = &cache.extra else { return Err(stale()) };
                single(crate::tensor::max_pool2d_backward(grad_out, idx)?, vec![])
            }
            Layer::Dense(l) => {
                let (dx, params) = l.backward(x, grad_out)?;
                single(dx, params)
            }
            Layer::Flatten => single(grad_out.clone().reshape(x.shape())?, vec![]),
            Layer::Dropout(_) => {
                let mut dx = grad_out.clone();
                if let CacheExtra::Mask(mask) = &cache.extra {
                    for (g, &m) in dx.data_mut().iter_mut().zip(mask) {
                        *g *= m;
                    }
                }
                single(dx, vec![])
            }
            Layer::BatchNorm(l) => {
                let CacheExtra::BatchNorm(bn) = &cache.extra else { return Err(stale()) };
                let (dx, params) = l.backward(grad_out, bn)?;
                single(dx, params)
            }
            Layer::Activation(kind) => {
                let CacheExtra::Output(y) = &cache.extra else { return Err(stale()) };
                single(crate::tensor::activation_backward(*kind, x, y, grad_out)?, vec![])
            }
            Layer::ResidualAdd => LayerGrads { inputs: vec![grad_out.clone(), grad_out.clone()], params: vec![] },
        })
    }

    /// Folds a train-mode forward's batch statistics into the running ones.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        if let (Layer::BatchNorm(l), CacheExtra::BatchNorm(bn)) = (self, &cache.extra) {
            if cache.mode == Mode::Train {
                l.update_running(bn);
            }
        }
    }
}

fn padding_name(p: crate::tensor::Padding) -> &'static str {
    match p {
        crate::tensor::Padding::Valid => "valid",
        crate::tensor::Padding::Same => "same",
    }
}
