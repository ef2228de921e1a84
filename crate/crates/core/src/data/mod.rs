//! Dataset scanning, image loading, augmentation, batching, and the
//! synthetic fixture generator.
//!
//! Expected layout: `<root>/{train,val,test}/<class>/*.{jpeg,jpg,png}`.

mod augment;
mod fixture;
mod image;
mod manifest;
mod split;
mod stream;

pub use self::image::{load_image, load_image_sized, resize_bilinear};
pub use augment::{apply_affine, augment, AffineParams, AugmentConfig};
pub use fixture::{generate_synthetic_fixture, render_fixture_image, FixtureSpec, FIXTURE_CLASS_SHAPES};
pub use manifest::{scan_dataset, DatasetManifest, Split, SplitFiles, IMAGE_EXTENSIONS};
pub use split::{split_dataset, split_targets, PUBLISHED_SPLIT_RATIOS};
pub use stream::{epoch_order, stream_batches, Batch, BatchStream, StreamConfig};
