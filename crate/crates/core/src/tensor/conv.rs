use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{gemm, Scalar, Tensor};
use crate::error::{Error, Result};

/// Samples per work unit when reducing weight gradients. Fixed so the
/// summation order never depends on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    /// Zero padding so that `out = ceil(in / stride)`; when the total pad is
    /// odd the extra row/column goes to the bottom/right.
    Same,
}

/// Order of the two factors in a depthwise separable convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeparableOrder {
    PointwiseFirst,
    DepthwiseFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn new(kernel: usize, in_channels: usize, out_channels: usize, stride: usize, padding: Padding) -> Self {
        Self { kernel_h: kernel, kernel_w: kernel, in_channels, out_channels, stride, padding }
    }

    /// Spec for a depthwise convolution over `channels` (multiplier 1).
    pub fn depthwise(kernel: usize, channels: usize, stride: usize, padding: Padding) -> Self {
        Self::new(kernel, channels, channels, stride, padding)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidSpec(format!("conv dims must be positive: {self:?}")));
        }
        if self.stride == 0 {
            return Err(Error::InvalidSpec("conv stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Output spatial size along one axis and the leading pad.
    pub fn axis(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
        if stride == 0 || kernel == 0 {
            return Err(Error::InvalidSpec("kernel and stride must be >= 1".into()));
        }
        match padding {
            Padding::Valid => {
                if input < kernel {
                    return Err(Error::InvalidSpec(format!(
                        "valid window {kernel} larger than input {input}: output dim < 1"
                    )));
                }
                Ok(((input - kernel) / stride + 1, 0))
            }
            Padding::Same => {
                let out = input.div_ceil(stride);
                let total = ((out - 1) * stride + kernel).saturating_sub(input);
                Ok((out, total / 2))
            }
        }
    }

    /// `(out_h, out_w, pad_top, pad_left)` for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize, usize, usize)> {
        let (oh, pt) = Self::axis(h, self.kernel_h, self.stride, self.padding)?;
        let (ow, pl) = Self::axis(w, self.kernel_w, self.stride, self.padding)?;
        Ok((oh, ow, pt, pl))
    }

    fn kernel_shape(&self) -> [usize; 4] {
        [self.kernel_h, self.kernel_w, self.in_channels, self.out_channels]
    }
}

/// Resolved geometry of one convolution call.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn resolve<T: Scalar>(input: &Tensor<T>, spec: &ConvSpec, context: &str) -> Result<Self> {
        spec.validate()?;
        let [n, h, w, cin] = input.dims4(context)?;
        if cin != spec.in_channels {
            return Err(Error::shape(format!("{context} input channels"), &[n, h, w, spec.in_channels], input.shape()));
        }
        let (oh, ow, pad_top, pad_left) = spec.output_hw(h, w)?;
        Ok(Self { n, h, w, cin, oh, ow, kh: spec.kernel_h, kw: spec.kernel_w, stride: spec.stride, pad_top, pad_left })
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }

    /// 1x1, stride 1: the input item already is the im2col matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    /// Input row/column for output coordinate `o` and kernel tap `k`.
    fn source(&self, o: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k).checked_sub(pad)?;
        (pos < limit).then_some(pos)
    }

    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        let patch = self.patch_len();
        let run = self.kw * self.cin;
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &mut col[(oy * self.ow + ox) * patch..][..patch];
                for ky in 0..self.kh {
                    let dst = &mut row[ky * run..][..run];
                    let Some(iy) = self.source(oy, ky, self.pad_top, self.h) else {
                        dst.fill(T::zero());
                        continue;
                    };
                    for kx in 0..self.kw {
                        let d = &mut dst[kx * self.cin..][..self.cin];
                        match self.source(ox, kx, self.pad_left, self.w) {
                            Some(ix) => d.copy_from_slice(&x[(iy * self.w + ix) * self.cin..][..self.cin]),
                            None => d.fill(T::zero()),
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, col: &[T], dx: &mut [T]) {
        let patch = self.patch_len();
        dx.fill(T::zero());
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &col[(oy * self.ow + ox) * patch..][..patch];
                for ky in 0..self.kh {
                    let Some(iy) = self.source(oy, ky, self.pad_top, self.h) else {
                        continue;
                    };
                    for kx in 0..self.kw {
                        let Some(ix) = self.source(ox, kx, self.pad_left, self.w) else {
                            continue;
                        };
                        let src = &row[(ky * self.kw + kx) * self.cin..][..self.cin];
                        let d = &mut dx[(iy * self.w + ix) * self.cin..][..self.cin];
                        for (a, &b) in d.iter_mut().zip(src) {
                            *a += b;
                        }
                    }
                }
            }
        }
    }
}

fn check_kernel<T: Scalar>(kernels: &Tensor<T>, expected: [usize; 4], context: &str) -> Result<()> {
    if kernels.shape() != expected {
        return Err(Error::shape(format!("{context} kernel"), &expected, kernels.shape()));
    }
    Ok(())
}

fn check_bias<T: Scalar>(bias: Option<&[T]>, channels: usize, context: &str) -> Result<()> {
    match bias {
        Some(b) if b.len() != channels => Err(Error::shape(format!("{context} bias"), &[channels], &[b.len()])),
        _ => Ok(()),
    }
}

/// Direct 2-D cross-correlation (no kernel flip), NHWC.
///
/// `kernels` is `kh x kw x Cin x Cout`; `bias`, when present, is added per
/// output channel.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = Geometry::resolve(input, spec, "conv2d")?;
    check_kernel(kernels, spec.kernel_shape(), "conv2d")?;
    check_bias(bias, spec.out_channels, "conv2d")?;
    let cout = spec.out_channels;
    let (patch, pixels) = (g.patch_len(), g.out_pixels());
    let mut out = vec![T::zero(); g.n * pixels * cout];
    let in_item = g.h * g.w * g.cin;
    let k = kernels.data();

    out.par_chunks_mut(pixels * cout).zip(input.data().par_chunks(in_item)).for_each(|(y, x)| {
        if g.is_pointwise() {
            gemm(pixels, patch, cout, x, false, k, false, T::zero(), y);
        } else {
            let mut col = vec![T::zero(); pixels * patch];
            g.im2col(x, &mut col);
            gemm(pixels, patch, cout, &col, false, k, false, T::zero(), y);
        }
        if let Some(b) = bias {
            for px in y.chunks_exact_mut(cout) {
                for (v, &bb) in px.iter_mut().zip(b) {
                    *v += bb;
                }
            }
        }
    });
    Tensor::new([g.n, g.oh, g.ow, cout], out)
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

fn sum_in_order<T: Scalar>(parts: Vec<(Vec<T>, Vec<T>)>) -> (Vec<T>, Vec<T>) {
    let mut iter = parts.into_iter();
    let (mut k, mut b) = iter.next().expect("at least one chunk");
    for (pk, pb) in iter {
        for (a, v) in k.iter_mut().zip(pk) {
            *a += v;
        }
        for (a, v) in b.iter_mut().zip(pb) {
            *a += v;
        }
    }
    (k, b)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
    with_bias: bool,
) -> Result<ConvGrads<T>> {
    let g = Geometry::resolve(input, spec, "conv2d backward")?;
    check_kernel(kernels, spec.kernel_shape(), "conv2d backward")?;
    let cout = spec.out_channels;
    let expected = [g.n, g.oh, g.ow, cout];
    if grad_out.shape() != expected {
        return Err(Error::shape("conv2d backward grad_out", &expected, grad_out.shape()));
    }
    let (patch, pixels) = (g.patch_len(), g.out_pixels());
    let in_item = g.h * g.w * g.cin;
    let out_item = pixels * cout;
    let k = kernels.data();
    let mut dx = vec![T::zero(); input.len()];

    let parts: Vec<(Vec<T>, Vec<T>)> = dx
        .par_chunks_mut(in_item * GRAD_CHUNK)
        .zip(input.data().par_chunks(in_item * GRAD_CHUNK))
        .zip(grad_out.data().par_chunks(out_item * GRAD_CHUNK))
        .map(|((dx_chunk, x_chunk), dy_chunk)| {
            let mut dk = vec![T::zero(); patch * cout];
            let mut db = vec![T::zero(); cout];
            let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); pixels * patch] };
            let mut dcol = col.clone();
            for ((dxi, xi), dyi) in
                dx_chunk.chunks_mut(in_item).zip(x_chunk.chunks(in_item)).zip(dy_chunk.chunks(out_item))
            {
                if g.is_pointwise() {
                    gemm(patch, pixels, cout, xi, true, dyi, false, T::one(), &mut dk);
                    gemm(pixels, cout, patch, dyi, false, k, true, T::zero(), dxi);
                } else {
                    g.im2col(xi, &mut col);
                    gemm(patch, pixels, cout, &col, true, dyi, false, T::one(), &mut dk);
                    gemm(pixels, cout, patch, dyi, false, k, true, T::zero(), &mut dcol);
                    g.col2im(&dcol, dxi);
                }
                if with_bias {
                    for px in dyi.chunks_exact(cout) {
                        for (a, &v) in db.iter_mut().zip(px) {
                            *a += v;
                        }
                    }
                }
            }
            (dk, db)
        })
        .collect();

    let (dk, db) = sum_in_order(parts);
    Ok(ConvGrads {
        input: Tensor::new(input.shape(), dx)?,
        kernel: Tensor::new(kernels.shape(), dk)?,
        bias: with_bias.then_some(db),
    })
}

/// Per-channel convolution with depth multiplier 1; `kernels` is
/// `kh x kw x C x 1`.
pub fn depthwise_conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = Geometry::resolve(input, spec, "depthwise_conv2d")?;
    if spec.in_channels != spec.out_channels {
        return Err(Error::InvalidSpec("depthwise conv keeps the channel count".into()));
    }
    check_kernel(kernels, [g.kh, g.kw, g.cin, 1], "depthwise_conv2d")?;
    check_bias(bias, g.cin, "depthwise_conv2d")?;
    let c = g.cin;
    let in_item = g.h * g.w * c;
    let out_item = g.out_pixels() * c;
    let k = kernels.data();
    let mut out = vec![T::zero(); g.n * out_item];

    out.par_chunks_mut(out_item).zip(input.data().par_chunks(in_item)).for_each(|(y, x)| {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let px = &mut y[(oy * g.ow + ox) * c..][..c];
                if let Some(b) = bias {
                    px.copy_from_slice(b);
                }
                for ky in 0..g.kh {
                    let Some(iy) = g.source(oy, ky, g.pad_top, g.h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = g.source(ox, kx, g.pad_left, g.w) else { continue };
                        let xs = &x[(iy * g.w + ix) * c..][..c];
                        let ks = &k[(ky * g.kw + kx) * c..][..c];
                        for ((o, &xv), &kv) in px.iter_mut().zip(xs).zip(ks) {
                            *o += xv * kv;
                        }
                    }
                }
            }
        }
    });
    Tensor::new([g.n, g.oh, g.ow, c], out)
}

pub fn depthwise_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
    with_bias: bool,
) -> Result<ConvGrads<T>> {
    let g = Geometry::resolve(input, spec, "depthwise_conv2d backward")?;
    check_kernel(kernels, [g.kh, g.kw, g.cin, 1], "depthwise_conv2d backward")?;
    let c = g.cin;
    let expected = [g.n, g.oh, g.ow, c];
    if grad_out.shape() != expected {
        return Err(Error::shape("depthwise_conv2d backward grad_out", &expected, grad_out.shape()));
    }
    let in_item = g.h * g.w * c;
    let out_item = g.out_pixels() * c;
    let k = kernels.data();
    let mut dx = vec![T::zero(); input.len()];

    let parts: Vec<(Vec<T>, Vec<T>)> = dx
        .par_chunks_mut(in_item * GRAD_CHUNK)
        .zip(input.data().par_chunks(in_item * GRAD_CHUNK))
        .zip(grad_out.data().par_chunks(out_item * GRAD_CHUNK))
        .map(|((dx_chunk, x_chunk), dy_chunk)| {
            let mut dk = vec![T::zero(); g.kh * g.kw * c];
            let mut db = vec![T::zero(); c];
            for ((dxi, xi), dyi) in
                dx_chunk.chunks_mut(in_item).zip(x_chunk.chunks(in_item)).zip(dy_chunk.chunks(out_item))
            {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let dy = &dyi[(oy * g.ow + ox) * c..][..c];
                        if with_bias {
                            for (a, &v) in db.iter_mut().zip(dy) {
                                *a += v;
                            }
                        }
                        for ky in 0..g.kh {
                            let Some(iy) = g.source(oy, ky, g.pad_top, g.h) else { continue };
                            for kx in 0..g.kw {
                                let Some(ix) = g.source(ox, kx, g.pad_left, g.w) else { continue };
                                let tap = (ky * g.kw + kx) * c;
                                let at = (iy * g.w + ix) * c;
                                for ch in 0..c {
                                    dk[tap + ch] += xi[at + ch] * dy[ch];
                                    dxi[at + ch] += k[tap + ch] * dy[ch];
                                }
                            }
                        }
                    }
                }
            }
            (dk, db)
        })
        .collect();

    let (dk, db) = sum_in_order(parts);
    Ok(ConvGrads {
        input: Tensor::new(input.shape(), dx)?,
        kernel: Tensor::new(kernels.shape(), dk)?,
        bias: with_bias.then_some(db),
    })
}

/// Pointwise (`1 x 1 x Cin x Cm`) and depthwise (`kh x kw x C x 1`)
/// convolutions composed in the requested order.
///
/// `spec` describes the whole operation: the depthwise kernel size, stride
/// and padding, the input channels and the final output channels. The 1x1
/// factor always runs at stride 1.
pub fn depthwise_separable_conv<T: Scalar>(
    input: &Tensor<T>,
    pointwise: &Tensor<T>,
    depthwise: &Tensor<T>,
    order: SeparableOrder,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (pw_spec, dw_spec) = separable_specs(pointwise, depthwise, order, spec)?;
    match order {
        SeparableOrder::PointwiseFirst => {
            let mid = conv2d(input, pointwise, None, &pw_spec)?;
            depthwise_conv2d(&mid, depthwise, None, &dw_spec)
        }
        SeparableOrder::DepthwiseFirst => {
            let mid = depthwise_conv2d(input, depthwise, None, &dw_spec)?;
            conv2d(&mid, pointwise, None, &pw_spec)
        }
    }
}

/// Splits a separable spec into its pointwise and depthwise parts after
/// checking the channel chain.
pub(crate) fn separable_specs<T: Scalar>(
    pointwise: &Tensor<T>,
    depthwise: &Tensor<T>,
    order: SeparableOrder,
    spec: &ConvSpec,
) -> Result<(ConvSpec, ConvSpec)> {
    spec.validate()?;
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let (pw, dw) = match order {
        // Cin -> Cout (1x1), then depthwise over Cout
        SeparableOrder::PointwiseFirst => (
            ConvSpec::new(1, cin, cout, 1, Padding::Valid),
            ConvSpec { in_channels: cout, out_channels: cout, ..*spec },
        ),
        // depthwise over Cin, then Cin -> Cout (1x1)
        SeparableOrder::DepthwiseFirst => {
            (ConvSpec::new(1, cin, cout, 1, Padding::Valid), ConvSpec { in_channels: cin, out_channels: cin, ..*spec })
        }
    };
    check_kernel(pointwise, pw.kernel_shape(), "separable pointwise")?;
    check_kernel(depthwise, [dw.kernel_h, dw.kernel_w, dw.in_channels, 1], "separable depthwise")?;
    Ok((pw, dw))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::<f32>::ones([1, 3, 3, 1]);
        let k = Tensor::<f32>::ones([3, 3, 1, 1]);
        let y = conv2d(&x, &k, Some(&[0.0]), &ConvSpec::new(3, 1, 1, 1, Padding::Valid)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn unit_pointwise_is_identity() {
        let x = Tensor::<f32>::from_fn([2, 4, 5, 1], |i| i as f32 * 0.37 - 2.0);
        let k = Tensor::<f32>::ones([1, 1, 1, 1]);
        let y = conv2d(&x, &k, Some(&[0.0]), &ConvSpec::new(1, 1, 1, 1, Padding::Valid)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn same_padding_keeps_size_at_stride_one() {
        for (h, k) in [(5, 3), (6, 3), (7, 5), (4, 2)] {
            let spec = ConvSpec::new(k, 1, 1, 1, Padding::Same);
            let (oh, ow, _, _) = spec.output_hw(h, h + 1).unwrap();
            assert_eq!((oh, ow), (h, h + 1));
        }
    }

    #[test]
    fn same_padding_puts_extra_pixel_bottom_right() {
        // 150 -> 75 at stride 2 with a 7x7 kernel needs 5 pad rows: 2 top, 3 bottom.
        assert_eq!(ConvSpec::axis(150, 7, 2, Padding::Same).unwrap(), (75, 2));
        // even kernel at stride 1: one pad row, at the bottom
        assert_eq!(ConvSpec::axis(4, 2, 1, Padding::Same).unwrap(), (4, 0));
    }

    #[test]
    fn oversized_valid_kernel_is_invalid_spec() {
        let x = Tensor::<f32>::ones([1, 2, 2, 1]);
        let k = Tensor::<f32>::ones([3, 3, 1, 1]);
        let err = conv2d(&x, &k, None, &ConvSpec::new(3, 1, 1, 1, Padding::Valid)).unwrap_err();
        assert!(matches!(err, Error::InvalidSpec(_)), "{err}");
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::<f32>::ones([1, 4, 4, 2]);
        let k = Tensor::<f32>::ones([3, 3, 3, 1]);
        let err = conv2d(&x, &k, None, &ConvSpec::new(3, 3, 1, 1, Padding::Valid)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 4, 4, 2]") && msg.contains("[1, 4, 4, 3]"), "{msg}");
    }

    #[test]
    fn separable_double_identity() {
        let x = Tensor::<f64>::from_fn([1, 4, 4, 3], |i| (i as f64).cos());
        let mut pw = Tensor::<f64>::zeros([1, 1, 3, 3]);
        for c in 0..3 {
            pw.data_mut()[c * 3 + c] = 1.0;
        }
        let dw = Tensor::<f64>::ones([1, 1, 3, 1]);
        for order in [SeparableOrder::PointwiseFirst, SeparableOrder::DepthwiseFirst] {
            let y = depthwise_separable_conv(&x, &pw, &dw, order, &ConvSpec::new(1, 3, 3, 1, Padding::Valid)).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn separable_constant_input_sums_to_nine_c() {
        let c = 0.7f64;
        let x = Tensor::<f64>::full([1, 5, 5, 2], c);
        let pw = Tensor::<f64>::new([1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let dw = Tensor::<f64>::ones([3, 3, 2, 1]);
        let y = depthwise_separable_conv(
            &x,
            &pw,
            &dw,
            SeparableOrder::PointwiseFirst,
            &ConvSpec::new(3, 2, 2, 1, Padding::Valid),
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 2]);
        assert!(y.data().iter().all(|&v| (v - 9.0 * c).abs() < 1e-12));
    }

    #[test]
    fn separable_channel_chain_mismatch() {
        let x = Tensor::<f32>::ones([1, 5, 5, 2]);
        let pw = Tensor::<f32>::ones([1, 1, 2, 4]);
        let dw = Tensor::<f32>::ones([3, 3, 2, 1]);
        let err = depthwise_separable_conv(
            &x,
            &pw,
            &dw,
            SeparableOrder::PointwiseFirst,
            &ConvSpec::new(3, 2, 4, 1, Padding::Valid),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape { .. }), "{err}");
    }
}
