use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::model::ModelConfig;
use crate::nn::ParamSet;

/// Default file name inside a run directory.
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

const MAGIC: &[u8; 8] = b"MSEGCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    fingerprint: String,
    epoch: u64,
    step: u64,
    config: TrainConfig,
}

/// A checkpoint: run metadata plus every named tensor (model parameters
/// under their canonical names, optimizer velocities under `opt.*`
/// prefixes). Tensor order in the file is the sorted name order, so two
/// checkpoints of equal state are byte-identical.
pub struct Checkpoint {
    pub fingerprint: String,
    pub epoch: u64,
    pub step: u64,
    pub config: TrainConfig,
    pub tensors: BTreeMap<String, ArrayD<f32>>,
}

impl Checkpoint {
    pub fn new(config: &TrainConfig, epoch: u64, step: u64) -> Self {
        Checkpoint {
            fingerprint: config.model.fingerprint(),
            epoch,
            step,
            config: config.clone(),
            tensors: BTreeMap::new(),
        }
    }

    /// Fails unless the checkpoint was written for exactly this
    /// architecture.
    pub fn verify_fingerprint(&self, model: &ModelConfig) -> Result<(), TrainError> {
        let expected = model.fingerprint();
        if self.fingerprint != expected {
            return Err(TrainError::FingerprintMismatch {
                expected,
                found: self.fingerprint.clone(),
            });
        }
        Ok(())
    }
}

/// Copies every tensor of a parameter set into the checkpoint map under
/// `prefix + name`.
pub fn insert_params<P: ParamSet<f32>>(
    tensors: &mut BTreeMap<String, ArrayD<f32>>,
    prefix: &str,
    params: &P,
) {
    for (name, t) in params.tensors() {
        tensors.insert(format!("{prefix}{name}"), t.to_owned());
    }
}

/// Restores every tensor of a parameter set from the checkpoint map,
/// requiring exact names and shapes.
pub fn extract_params<P: ParamSet<f32>>(
    tensors: &BTreeMap<String, ArrayD<f32>>,
    prefix: &str,
    params: &mut P,
) -> Result<(), TrainError> {
    for (name, mut t) in params.tensors_mut() {
        let full = format!("{prefix}{name}");
        let stored = tensors
            .get(&full)
            .ok_or_else(|| TrainError::CorruptCheckpoint(format!("missing tensor {full}")))?;
        if stored.shape() != t.shape() {
            return Err(TrainError::CorruptCheckpoint(format!(
                "tensor {full} has shape {:?}, expected {:?}",
                stored.shape(),
                t.shape()
            )));
        }
        t.assign(stored);
    }
    Ok(())
}

/// Writes a checkpoint atomically: the bytes land in a sibling temp file
/// that is renamed over the destination only once fully written.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), TrainError> {
    let io_err = |e: std::io::Error| TrainError::Io { path: path.to_path_buf(), source: e };
    let tmp = path.with_extension("tmp");
    {
        let file = fs::File::create(&tmp).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_u32::<LittleEndian>(VERSION).map_err(io_err)?;
        let header = Header {
            fingerprint: ckpt.fingerprint.clone(),
            epoch: ckpt.epoch,
            step: ckpt.step,
            config: ckpt.config.clone(),
        };
        let header_bytes = serde_json::to_vec(&header).expect("header serializes");
        w.write_u64::<LittleEndian>(header_bytes.len() as u64).map_err(io_err)?;
        w.write_all(&header_bytes).map_err(io_err)?;
        w.write_u64::<LittleEndian>(ckpt.tensors.len() as u64).map_err(io_err)?;
        for (name, tensor) in &ckpt.tensors {
            w.write_u64::<LittleEndian>(name.len() as u64).map_err(io_err)?;
            w.write_all(name.as_bytes()).map_err(io_err)?;
            w.write_u8(tensor.ndim() as u8).map_err(io_err)?;
            for &d in tensor.shape() {
                w.write_u64::<LittleEndian>(d as u64).map_err(io_err)?;
            }
            for &v in tensor.iter() {
                w.write_f32::<LittleEndian>(v).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    if !path.is_file() {
        return Err(TrainError::MissingCheckpoint(path.to_path_buf()));
    }
    let corrupt = |msg: &str| TrainError::CorruptCheckpoint(format!("{msg} in {}", path.display()));
    let file = fs::File::open(path)
        .map_err(|e| TrainError::Io { path: path.to_path_buf(), source: e })?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| corrupt("truncated magic"))?;
    if &magic != MAGIC {
        return Err(corrupt("wrong magic"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| corrupt("truncated version"))?;
    if version != VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let header_len = r.read_u64::<LittleEndian>().map_err(|_| corrupt("truncated header"))?;
    let mut header_bytes = vec![0u8; header_len as usize];
    r.read_exact(&mut header_bytes).map_err(|_| corrupt("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&header_bytes).map_err(|_| corrupt("unparseable header"))?;

    let count = r.read_u64::<LittleEndian>().map_err(|_| corrupt("truncated tensor count"))?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.read_u64::<LittleEndian>().map_err(|_| corrupt("truncated name"))?;
        let mut name = vec![0u8; name_len as usize];
        r.read_exact(&mut name).map_err(|_| corrupt("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| corrupt("non-utf8 tensor name"))?;
        let ndim = r.read_u8().map_err(|_| corrupt("truncated shape"))?;
        let mut shape = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            shape.push(
                r.read_u64::<LittleEndian>().map_err(|_| corrupt("truncated shape"))? as usize,
            );
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            values
                .push(r.read_f32::<LittleEndian>().map_err(|_| corrupt("truncated tensor data"))?);
        }
        let tensor = ArrayD::from_shape_vec(IxDyn(&shape), values)
            .map_err(|_| corrupt("inconsistent tensor shape"))?;
        tensors.insert(name, tensor);
    }
    let mut trailer = [0u8; 1];
    if r.read(&mut trailer).map_err(|_| corrupt("unreadable trailer"))? != 0 {
        return Err(corrupt("trailing bytes"));
    }
    Ok(Checkpoint {
        fingerprint: header.fingerprint,
        epoch: header.epoch,
        step: header.step,
        config: header.config,
        tensors,
    })
}
