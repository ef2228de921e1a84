use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fit::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{build, Arch, ArchConfig, Network};
use crate::tensor::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"OCTM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where training randomness stood when the file was written. Every random
/// stream is keyed by `(seed, epoch, ...)`, so this is enough to resume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub epochs_completed: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: Arch,
    pub arch_config: ArchConfig,
    pub tensors: Vec<TensorEntry>,
    pub train_config: Option<TrainConfig>,
    pub rng: Option<RngState>,
}

impl CheckpointHeader {
    pub fn payload_len(&self) -> usize {
        self.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum()
    }
}

pub struct Checkpoint<T: Scalar> {
    pub header: CheckpointHeader,
    pub network: Network<T>,
}

/// Layout: magic `OCTM`, u32 LE version, u32 LE header length, JSON
/// header, then every tensor as little-endian f32 in header order.
pub fn encode_checkpoint<T: Scalar>(
    net: &Network<T>,
    train_config: Option<&TrainConfig>,
    rng: Option<RngState>,
) -> Result<Vec<u8>> {
    let arch = net
        .arch()
        .ok_or_else(|| Error::Contract(format!("network {:?} was not built from a named architecture", net.name())))?;
    let state = net.state();
    let header = CheckpointHeader {
        arch,
        arch_config: net.config().clone(),
        tensors: state.iter().map(|(name, t)| TensorEntry { name: name.clone(), shape: t.shape().to_vec() }).collect(),
        train_config: train_config.cloned(),
        rng,
    };
    let json = serde_json::to_vec(&header)?;
    let payload = header.payload_len();
    let mut out = Vec::with_capacity(12 + json.len() + 4 * payload);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in state {
        for &v in t.data() {
            out.extend_from_slice(&v.to_f32().expect("finite").to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a checkpoint and rebuilds its network. Nothing is returned
/// unless the whole file is consistent.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < 12 {
        if !CHECKPOINT_MAGIC.starts_with(&bytes[..bytes.len().min(4)]) {
            return Err(Error::CheckpointCorrupt("bad magic bytes".into()));
        }
        return Err(Error::CheckpointTruncated(format!("{} bytes is shorter than the fixed preamble", bytes.len())));
    }
    if bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointCorrupt("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() < header_len {
        return Err(Error::CheckpointTruncated(format!("header needs {header_len} bytes, file has {}", body.len())));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..header_len]).map_err(|e| Error::CheckpointCorrupt(format!("header: {e}")))?;
    let payload = &body[header_len..];
    let expected = 4 * header.payload_len();
    if payload.len() < expected {
        return Err(Error::CheckpointTruncated(format!("payload needs {expected} bytes, file has {}", payload.len())));
    }
    if payload.len() > expected {
        return Err(Error::CheckpointCorrupt(format!("{} trailing bytes after the payload", payload.len() - expected)));
    }

    let mut network = build::<T>(header.arch, &header.arch_config)?;
    let names: Vec<(String, Vec<usize>)> = network.state().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    if names.len() != header.tensors.len() {
        return Err(Error::Contract(format!(
            "checkpoint lists {} tensors, {} has {}",
            header.tensors.len(),
            header.arch,
            names.len()
        )));
    }
    for ((name, shape), entry) in names.iter().zip(&header.tensors) {
        if *name != entry.name {
            return Err(Error::Contract(format!("checkpoint tensor {:?} where {name:?} was expected", entry.name)));
        }
        if *shape != entry.shape {
            return Err(Error::shape(format!("checkpoint tensor {name}"), shape, &entry.shape));
        }
    }
    let mut floats = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    for t in network.state_mut() {
        for v in t.data_mut() {
            *v = T::from_f32(floats.next().expect("length checked")).expect("f32 converts");
        }
    }
    Ok(Checkpoint { header, network })
}

/// Writes a checkpoint atomically: to a temporary file in the same
/// directory, then renamed over `path`.
pub fn save_checkpoint<T: Scalar>(
    net: &Network<T>,
    train_config: Option<&TrainConfig>,
    rng: Option<RngState>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(net, train_config, rng)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Parameter(format!("checkpoint path {} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(format!("writing checkpoint {}", path.display()), e)
    })
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    decode_checkpoint(&bytes)
}
