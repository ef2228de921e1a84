use super::{ConvSpec, Padding, Scalar, Tensor};
use crate::error::{Error, Result};

/// Flat input index of the selected element for every pooled output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// Channelwise max over `size x size` windows, no padding.
pub fn max_pool2d<T: Scalar>(input: &Tensor<T>, size: usize, stride: usize) -> Result<Tensor<T>> {
    max_pool2d_padded(input, size, stride, Padding::Valid).map(|(y, _)| y)
}

/// Max pooling with optional "same" padding. Padded positions never win.
///
/// Ties go to the first element in row-major window order, which is also
/// the element that receives the gradient.
pub fn max_pool2d_padded<T: Scalar>(
    input: &Tensor<T>,
    size: usize,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, PoolIndices)> {
    let [n, h, w, c] = input.dims4("max_pool2d")?;
    if size == 0 || stride == 0 {
        return Err(Error::InvalidSpec("pool size and stride must be >= 1".into()));
    }
    let (oh, pt) = ConvSpec::axis(h, size, stride, padding)?;
    let (ow, pl) = ConvSpec::axis(w, size, stride, padding)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    let mut best: Vec<Option<(T, usize)>> = vec![None; c];
    for b in 0..n {
        let base = b * h * w * c;
        for oy in 0..oh {
            for ox in 0..ow {
                best.fill(None);
                for ky in 0..size {
                    let Some(iy) = (oy * stride + ky).checked_sub(pt).filter(|&v| v < h) else { continue };
                    for kx in 0..size {
                        let Some(ix) = (ox * stride + kx).checked_sub(pl).filter(|&v| v < w) else { continue };
                        let at = base + (iy * w + ix) * c;
                        for (ch, slot) in best.iter_mut().enumerate() {
                            let v = x[at + ch];
                            match slot {
                                Some((m, _)) if v <= *m => {}
                                _ => *slot = Some((v, at + ch)),
                            }
                        }
                    }
                }
                for slot in &best {
                    let (v, i) = slot.expect("window overlaps the input");
                    out.push(v);
                    argmax.push(i);
                }
            }
        }
    }
    Ok((Tensor::new([n, oh, ow, c], out)?, PoolIndices { input_shape: input.shape().to_vec(), argmax }))
}

/// Routes each output gradient to the input element that won its window.
pub fn max_pool2d_backward<T: Scalar>(grad_out: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::Contract(format!(
            "max_pool backward: grad_out has {} elements, cache has {}",
            grad_out.len(),
            indices.argmax.len()
        )));
    }
    let mut dx = Tensor::zeros(indices.input_shape.clone());
    let d = dx.data_mut();
    for (&i, &g) in indices.argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(dx)
}
