use std::path::Path;

use crate::error::{Error, Result};
use crate::model::INPUT_SIZE;
use crate::tensor::Tensor;

/// Decodes a JPEG or PNG, replicates grayscale to RGB, resizes to
/// 150 x 150 and scales to [0, 1].
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    load_image_sized(path, INPUT_SIZE, INPUT_SIZE)
}

pub fn load_image_sized(path: impl AsRef<Path>, height: usize, width: usize) -> Result<Tensor> {
    let path = path.as_ref();
    let decode_err = |e: &dyn std::fmt::Display| Error::Decode { path: path.to_path_buf(), message: e.to_string() };
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?
        .with_guessed_format()
        .map_err(|e| decode_err(&e))?
        .decode()
        .map_err(|e| decode_err(&e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Format { path: path.to_path_buf(), message: format!("zero-sized image {w}x{h}") });
    }
    let data: Vec<f32> = img.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    let src = Tensor::new([h, w, 3], data)?;
    resize_bilinear(&src, height, width)
}

/// Bilinear resize of an `H x W x C` tensor with half-pixel centers and
/// edge clamping. Same-size input is returned unchanged.
pub fn resize_bilinear(src: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [h, w, c] = match *src.shape() {
        [h, w, c] => [h, w, c],
        _ => return Err(Error::shape("resize_bilinear expects HxWxC", &[out_h, out_w, 3], src.shape())),
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::Parameter("resize target must be non-empty".into()));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(src.clone());
    }
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, (pos - lo as f64) as f32)
            })
            .collect()
    };
    let ys = taps(h, out_h);
    let xs = taps(w, out_w);
    let s = src.data();
    let mut out = vec![0.0f32; out_h * out_w * c];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let dst = &mut out[(oy * out_w + ox) * c..][..c];
            for (ch, d) in dst.iter_mut().enumerate() {
                let at = |y: usize, x: usize| s[(y * w + x) * c + ch];
                let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
                let bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
                *d = top + (bottom - top) * fy;
            }
        }
    }
    Tensor::new([out_h, out_w, c], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_stays_constant() {
        let src = Tensor::full([496, 512, 3], 128.0 / 255.0);
        let out = resize_bilinear(&src, 150, 150).unwrap();
        assert!(out.data().iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-6));
    }

    #[test]
    fn same_size_is_identity() {
        let src = Tensor::from_fn([150, 150, 3], |i| (i % 255) as f32 / 255.0);
        assert_eq!(resize_bilinear(&src, 150, 150).unwrap(), src);
    }
}
