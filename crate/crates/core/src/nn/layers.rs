use rand::Rng;

use super::init::he_uniform;
use super::{ForwardCtx, Mode};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{
    conv2d, conv2d_backward, dense, dense_backward, depthwise_conv2d, depthwise_conv2d_backward, max_pool2d_padded,
    ConvSpec, Padding, PoolIndices, Scalar, SeparableOrder, Tensor,
};

#[derive(Clone, Debug)]
pub struct Conv<T: Scalar> {
    pub spec: ConvSpec,
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> Conv<T> {
    pub fn new<R: Rng + ?Sized>(spec: ConvSpec, use_bias: bool, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let fan_in = spec.kernel_h * spec.kernel_w * spec.in_channels;
        Ok(Self {
            kernel: he_uniform([spec.kernel_h, spec.kernel_w, spec.in_channels, spec.out_channels], fan_in, rng),
            bias: use_bias.then(|| Tensor::zeros([spec.out_channels])),
            spec,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.kernel, self.bias.as_ref().map(|b| b.data()), &self.spec)
    }

    pub(crate) fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let g = conv2d_backward(x, &self.kernel, dy, &self.spec, self.bias.is_some())?;
        let mut params = vec![g.kernel];
        if let Some(db) = g.bias {
            params.push(Tensor::new([db.len()], db)?);
        }
        Ok((g.input, params))
    }
}

#[derive(Clone, Debug)]
pub struct DepthwiseConv<T: Scalar> {
    pub spec: ConvSpec,
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> DepthwiseConv<T> {
    pub fn new<R: Rng + ?Sized>(spec: ConvSpec, use_bias: bool, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        if spec.in_channels != spec.out_channels {
            return Err(Error::InvalidSpec("depthwise conv keeps the channel count".into()));
        }
        let c = spec.in_channels;
        Ok(Self {
            kernel: he_uniform([spec.kernel_h, spec.kernel_w, c, 1], spec.kernel_h * spec.kernel_w, rng),
            bias: use_bias.then(|| Tensor::zeros([c])),
            spec,
        })
    }

    pub(crate) fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        depthwise_conv2d(x, &self.kernel, self.bias.as_ref().map(|b| b.data()), &self.spec)
    }

    pub(crate) fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let g = depthwise_conv2d_backward(x, &self.kernel, dy, &self.spec, self.bias.is_some())?;
        let mut params = vec![g.kernel];
        if let Some(db) = g.bias {
            params.push(Tensor::new([db.len()], db)?);
        }
        Ok((g.input, params))
    }
}

/// Depthwise separable convolution as one layer. The stride and padding in
/// `spec` apply to the depthwise factor; the bias, if any, is added last.
#[derive(Clone, Debug)]
pub struct SeparableConv<T: Scalar> {
    pub spec: ConvSpec,
    pub order: SeparableOrder,
    pub depthwise: Tensor<T>,
    pub pointwise: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> SeparableConv<T> {
    pub fn new<R: Rng + ?Sized>(spec: ConvSpec, order: SeparableOrder, use_bias: bool, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let (cin, cout) = (spec.in_channels, spec.out_channels);
        let taps = spec.kernel_h * spec.kernel_w;
        let dw_channels = match order {
            SeparableOrder::PointwiseFirst => cout,
            SeparableOrder::DepthwiseFirst => cin,
        };
        Ok(Self {
            depthwise: he_uniform([spec.kernel_h, spec.kernel_w, dw_channels, 1], taps, rng),
            pointwise: he_uniform([1, 1, cin, cout], cin, rng),
            bias: use_bias.then(|| Tensor::zeros([cout])),
            spec,
            order,
        })
    }

    fn specs(&self) -> Result<(ConvSpec, ConvSpec)> {
        crate::tensor::conv::separable_specs(&self.pointwise, &self.depthwise, self.order, &self.spec)
    }

    /// Returns the output and the intermediate activation between factors.
    pub(crate) fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (pw, dw) = self.specs()?;
        let bias = self.bias.as_ref().map(|b| b.data());
        match self.order {
            SeparableOrder::PointwiseFirst => {
                let mid = conv2d(x, &self.pointwise, None, &pw)?;
                let y = depthwise_conv2d(&mid, &self.depthwise, bias, &dw)?;
                Ok((y, mid))
            }
            SeparableOrder::DepthwiseFirst => {
                let mid = depthwise_conv2d(x, &self.depthwise, None, &dw)?;
                let y = conv2d(&mid, &self.pointwise, bias, &pw)?;
                Ok((y, mid))
            }
        }
    }

    pub(crate) fn backward(
        &self,
        x: &Tensor<T>,
        mid: &Tensor<T>,
        dy: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let (pw, dw) = self.specs()?;
        let with_bias = self.bias.is_some();
        let (dx, d_dw, d_pw, db) = match self.order {
            SeparableOrder::PointwiseFirst => {
                let outer = depthwise_conv2d_backward(mid, &self.depthwise, dy, &dw, with_bias)?;
                let inner = conv2d_backward(x, &self.pointwise, &outer.input, &pw, false)?;
                (inner.input, outer.kernel, inner.kernel, outer.bias)
            }
            SeparableOrder::DepthwiseFirst => {
                let outer = conv2d_backward(mid, &self.pointwise, dy, &pw, with_bias)?;
                let inner = depthwise_conv2d_backward(x, &self.depthwise, &outer.input, &dw, false)?;
                (inner.input, inner.kernel, outer.kernel, outer.bias)
            }
        };
        let mut params = vec![d_dw, d_pw];
        if let Some(db) = db {
            params.push(Tensor::new([db.len()], db)?);
        }
        Ok((dx, params))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool {
    pub size: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl MaxPool {
    pub fn new(size: usize, stride: usize, padding: Padding) -> Self {
        Self { size, stride, padding }
    }

    pub(crate) fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
        max_pool2d_padded(x, self.size, self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct Dense<T: Scalar> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self { weights: he_uniform([inputs, outputs], inputs, rng), bias: Tensor::zeros([outputs]) }
    }

    pub(crate) fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        dense(x, &self.weights, Some(self.bias.data()))
    }

    pub(crate) fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let g = dense_backward(x, &self.weights, dy)?;
        let db = Tensor::new([g.bias.len()], g.bias)?;
        Ok((g.input, vec![g.weights, db]))
    }
}

/// Inverted dropout: in train mode survivors are scaled by `1 / (1 - p)`,
/// so inference is the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout probability {p} outside [0, 1)")));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Output and, in train mode with `p > 0`, the applied mask.
    pub(crate) fn forward<T: Scalar>(&self, x: &Tensor<T>, ctx: &ForwardCtx) -> Result<(Tensor<T>, Option<Vec<T>>)> {
        if ctx.mode == Mode::Infer || self.p == 0.0 {
            return Ok((x.clone(), None));
        }
        let keep = 1.0 - self.p;
        let scale = T::from_f64_lossy(1.0 / keep);
        let mut rng = seed::rng(ctx.seed);
        let mask: Vec<T> = (0..x.len()).map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() }).collect();
        let mut y = x.clone();
        for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok((y, Some(mask)))
    }
}
