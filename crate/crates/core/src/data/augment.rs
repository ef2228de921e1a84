use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Random geometric augmentation. Ranges are symmetric: a rotation range
/// of 15 samples uniformly from [-15, 15] degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub rotation_deg: f64,
    /// Fraction of the image width/height.
    pub shift: f64,
    pub shear_deg: f64,
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { enabled: true, rotation_deg: 15.0, shift: 0.1, shear_deg: 10.0, flip_prob: 0.5 }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [self.rotation_deg, self.shift, self.shear_deg];
        if ranges.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Parameter(format!("augmentation ranges must be >= 0: {self:?}")));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Parameter(format!("flip probability {} outside [0, 1]", self.flip_prob)));
        }
        Ok(())
    }

    /// Draws one transform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AffineParams {
        let mut sym = |r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        let rotation_deg = sym(self.rotation_deg);
        let shift_x = sym(self.shift);
        let shift_y = sym(self.shift);
        let shear_deg = sym(self.shear_deg);
        let flip = self.flip_prob > 0.0 && rng.random_bool(self.flip_prob);
        AffineParams { rotation_deg, shift_x, shift_y, shear_deg, flip }
    }
}

/// A concrete transform about the image center: horizontal flip, then
/// shear, then rotation, then shift (as fractions of width and height).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub rotation_deg: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    pub shear_deg: f64,
    pub flip: bool,
}

/// Augments an `H x W x C` image. The draw depends only on
/// `(seed, sample_index)`.
pub fn augment(image: &Tensor, cfg: &AugmentConfig, seed: u64, sample_index: u64) -> Result<Tensor> {
    if !cfg.enabled {
        return Ok(image.clone());
    }
    cfg.validate()?;
    let params = cfg.sample(&mut seed::rng(seed::mix(seed, sample_index)));
    apply_affine(image, &params)
}

/// Applies `params` by inverse mapping with bilinear sampling; samples
/// falling outside the source read as zero.
pub fn apply_affine(image: &Tensor, params: &AffineParams) -> Result<Tensor> {
    let [h, w, c] = match *image.shape() {
        [h, w, c] => [h, w, c],
        _ => return Err(Error::shape("apply_affine expects HxWxC", &[0, 0, 0], image.shape())),
    };
    // forward map M = R * S * F on centered coordinates (x right, y down)
    let f = if params.flip { -1.0 } else { 1.0 };
    let sh = params.shear_deg.to_radians().tan();
    let (sin, cos) = params.rotation_deg.to_radians().sin_cos();
    // S * F = [[f, sh], [0, 1]]
    let m = [[cos * f, cos * sh - sin], [sin * f, sin * sh + cos]];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let tx = params.shift_x * w as f64;
    let ty = params.shift_y * h as f64;

    let src = image.data();
    let mut out = vec![0.0f32; image.len()];
    for oy in 0..h {
        for ox in 0..w {
            let u = ox as f64 - cx - tx;
            let v = oy as f64 - cy - ty;
            let sx = inv[0][0] * u + inv[0][1] * v + cx;
            let sy = inv[1][0] * u + inv[1][1] * v + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = (sx - x0) as f32;
            let fy = (sy - y0) as f32;
            let (x0, y0) = (x0 as isize, y0 as isize);
            let dst = &mut out[(oy * w + ox) * c..][..c];
            for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                    let (y, x) = (y0 + dy, x0 + dx);
                    let weight = wy * wx;
                    if weight == 0.0 || y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                        continue;
                    }
                    let px = &src[(y as usize * w + x as usize) * c..][..c];
                    for (d, &s) in dst.iter_mut().zip(px) {
                        *d += weight * s;
                    }
                }
            }
        }
    }
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::new([h, w, c], out)
}
