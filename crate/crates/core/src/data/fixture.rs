use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::Split;
use crate::error::{Error, Result};
use crate::model::CLASS_NAMES;
use crate::seed;

/// Shape drawn for each class folder, in class order.
pub const FIXTURE_CLASS_SHAPES: [&str; 4] = ["filled disc", "hollow ring", "horizontal bars", "uniform noise"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Side length of the square PNGs.
    pub size: usize,
    pub seed: u64,
}

impl FixtureSpec {
    /// `per_class` images per class in every split.
    pub fn uniform(per_class: usize, size: usize, seed: u64) -> Self {
        Self { train_per_class: per_class, val_per_class: per_class, test_per_class: per_class, size, seed }
    }

    pub fn per_class(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_per_class,
            Split::Val => self.val_per_class,
            Split::Test => self.test_per_class,
        }
    }
}

/// Renders one grayscale image of `class`; `key` selects the random draw.
pub fn render_fixture_image(class: usize, size: usize, key: u64) -> Vec<u8> {
    let mut rng = seed::rng(key);
    let n = size as f64;
    let cx = n / 2.0 + rng.random_range(-0.08..0.08) * n;
    let cy = n / 2.0 + rng.random_range(-0.08..0.08) * n;
    let radius = n * rng.random_range(0.26..0.32);
    let level = rng.random_range(0.75..0.95);
    let period = n / 6.0;
    let phase = rng.random_range(-0.05..0.05) * period;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let r = ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt();
            let base: f64 = match class {
                0 => {
                    if r <= radius {
                        level
                    } else {
                        0.05
                    }
                }
                1 => {
                    if (r - radius).abs() <= n * 0.05 {
                        level
                    } else {
                        0.05
                    }
                }
                2 => {
                    let t = ((fy + phase) / period).rem_euclid(1.0);
                    if t < 0.5 {
                        level
                    } else {
                        0.05
                    }
                }
                _ => rng.random_range(0.0..1.0),
            };
            let noisy = if class == 3 { base } else { base + rng.random_range(-0.04..0.04) };
            out.push((noisy.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Writes `<out>/{train,val,test}/{CNV,DME,DRUSEN,NORMAL}/*.png`.
pub fn generate_synthetic_fixture(spec: &FixtureSpec, out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    if spec.size < 8 {
        return Err(Error::Parameter(format!("fixture image size {} is below 8", spec.size)));
    }
    for split in Split::ALL {
        for (c, class) in CLASS_NAMES.iter().enumerate() {
            let dir = out.join(split.dir_name()).join(class);
            fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
            for i in 0..spec.per_class(split) {
                let key = seed::mix3(seed::mix(spec.seed, split.index() as u64), c as u64, i as u64);
                let pixels = render_fixture_image(c, spec.size, key);
                let img = image::GrayImage::from_raw(spec.size as u32, spec.size as u32, pixels)
                    .expect("buffer matches dimensions");
                let path = dir.join(format!("{}-{split}-{i:04}.png", class.to_lowercase()));
                img.save_with_format(&path, image::ImageFormat::Png).map_err(|e| match e {
                    image::ImageError::IoError(io) => Error::io(format!("writing {}", path.display()), io),
                    other => Error::io(format!("writing {}", path.display()), std::io::Error::other(other.to_string())),
                })?;
            }
        }
    }
    Ok(())
}
