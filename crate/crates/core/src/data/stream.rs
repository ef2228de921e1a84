use std::path::PathBuf;
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::augment::{augment, AugmentConfig};
use super::image::load_image_sized;
use super::manifest::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::model::INPUT_SIZE;
use crate::seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct StreamConfig {
    pub batch_size: usize,
    pub seed: u64,
    pub epoch: usize,
    pub shuffle: bool,
    pub augment: AugmentConfig,
    /// Batches decoded ahead of the consumer on a worker thread; 0 decodes
    /// on the calling thread.
    pub prefetch: usize,
    pub image_size: usize,
}

impl StreamConfig {
    pub fn new(batch_size: usize, seed: u64) -> Self {
        Self {
            batch_size,
            seed,
            epoch: 0,
            shuffle: true,
            augment: AugmentConfig::disabled(),
            prefetch: 2,
            image_size: INPUT_SIZE,
        }
    }

    /// Sequential order, no augmentation: for evaluation passes.
    pub fn ordered(batch_size: usize) -> Self {
        Self { shuffle: false, ..Self::new(batch_size, 0) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `B x S x S x 3`, values in [0, 1].
    pub images: Tensor,
    /// One-hot, `B x K`.
    pub labels: Tensor,
    /// Positions in the split's class-major item list.
    pub indices: Vec<usize>,
    pub classes: Vec<usize>,
}

/// Visiting order of `n` items for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut seed::rng(seed::mix(seed, epoch as u64)));
    }
    order
}

struct Producer {
    root: PathBuf,
    items: Vec<(PathBuf, usize)>,
    num_classes: usize,
    order: Vec<usize>,
    cursor: usize,
    cfg: StreamConfig,
    failed: bool,
}

impl Producer {
    fn load(&self, index: usize) -> Result<Tensor> {
        let (rel, _) = &self.items[index];
        let img = load_image_sized(self.root.join(rel), self.cfg.image_size, self.cfg.image_size)?;
        let aug_seed = seed::mix3(self.cfg.seed, 0xA0, self.cfg.epoch as u64);
        augment(&img, &self.cfg.augment, aug_seed, index as u64)
    }

    fn next_batch(&mut self) -> Option<Result<Batch>> {
        if self.failed || self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.cfg.batch_size).min(self.order.len());
        let indices = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        let loaded: Vec<Result<Tensor>> = indices.par_iter().map(|&i| self.load(i)).collect();
        let s = self.cfg.image_size;
        let mut pixels = Vec::with_capacity(indices.len() * s * s * 3);
        for img in loaded {
            match img {
                Ok(t) => pixels.extend_from_slice(t.data()),
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
        let classes: Vec<usize> = indices.iter().map(|&i| self.items[i].1).collect();
        let mut onehot = vec![0.0f32; indices.len() * self.num_classes];
        for (row, &c) in classes.iter().enumerate() {
            onehot[row * self.num_classes + c] = 1.0;
        }
        let b = indices.len();
        Some((|| {
            Ok(Batch {
                images: Tensor::new([b, s, s, 3], pixels)?,
                labels: Tensor::new([b, self.num_classes], onehot)?,
                indices,
                classes,
            })
        })())
    }
}

enum Source {
    Inline(Box<Producer>),
    Prefetch { rx: Receiver<Result<Batch>>, worker: Option<JoinHandle<()>> },
}

/// One epoch of batches. Ends after the first error.
pub struct BatchStream {
    source: Source,
    num_items: usize,
    batch_size: usize,
    done: bool,
}

impl BatchStream {
    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_batches(&self) -> usize {
        self.num_items.div_ceil(self.batch_size)
    }
}

impl Iterator for BatchStream {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = match &mut self.source {
            Source::Inline(p) => p.next_batch(),
            Source::Prefetch { rx, .. } => rx.recv().ok(),
        };
        if !matches!(item, Some(Ok(_))) {
            self.done = true;
        }
        item
    }
}

impl Drop for BatchStream {
    fn drop(&mut self) {
        if let Source::Prefetch { rx, worker } = &mut self.source {
            // Unblock the worker by draining, then wait for it.
            while rx.try_recv().is_ok() {}
            let (_, dead) = sync_channel::<Result<Batch>>(0);
            let rx = std::mem::replace(rx, dead);
            drop(rx);
            if let Some(handle) = worker.take() {
                let _ = handle.join();
            }
        }
    }
}

/// Streams one epoch of `split` in batches.
pub fn stream_batches(manifest: &DatasetManifest, split: Split, cfg: &StreamConfig) -> Result<BatchStream> {
    if cfg.batch_size == 0 {
        return Err(Error::Parameter("batch size must be >= 1".into()));
    }
    if cfg.image_size == 0 {
        return Err(Error::Parameter("image size must be >= 1".into()));
    }
    cfg.augment.validate()?;
    let items: Vec<(PathBuf, usize)> =
        manifest.split(split).items().into_iter().map(|(p, c)| (p.to_path_buf(), c)).collect();
    if items.is_empty() {
        return Err(Error::EmptyInput(format!("split {split} has no images")));
    }
    let order = epoch_order(items.len(), cfg.seed, cfg.epoch, cfg.shuffle);
    let num_items = items.len();
    let mut producer = Producer {
        root: manifest.root.clone(),
        items,
        num_classes: manifest.num_classes(),
        order,
        cursor: 0,
        cfg: cfg.clone(),
        failed: false,
    };
    let source = if cfg.prefetch == 0 {
        Source::Inline(Box::new(producer))
    } else {
        let (tx, rx) = sync_channel(cfg.prefetch);
        let worker = std::thread::Builder::new()
            .name("batch-prefetch".into())
            .spawn(move || {
                while let Some(batch) = producer.next_batch() {
                    if tx.send(batch).is_err() {
                        break;
                    }
                }
            })
            .map_err(|e| Error::io("spawning prefetch thread", e))?;
        Source::Prefetch { rx, worker: Some(worker) }
    };
    Ok(BatchStream { source, num_items, batch_size: cfg.batch_size, done: false })
}
