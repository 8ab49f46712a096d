//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "UWTR1"
//! u32 height, u32 width, u32 patch, u32 channels, u32 layers, u32 heads,
//! u32 mlp_hidden, u64 seed, f64 gamma
//! u32 tensor_count
//! repeated: u32 name_len, name (utf-8), u32 rank, rank x u32 dims,
//!           prod(dims) x f32 payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::tensor::Tensor;
use super::{ModelConfig, ModelError, ModelParams};
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"UWTR1";

pub fn write_checkpoint<T: Scalar, W: Write>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    out: &mut W,
) -> Result<(), ModelError> {
    params.check_config(cfg)?;
    out.write_all(CHECKPOINT_MAGIC)?;
    for v in [
        cfg.height,
        cfg.width,
        cfg.patch,
        cfg.channels,
        cfg.layers,
        cfg.heads,
        cfg.mlp_hidden,
    ] {
        out.write_u32::<LittleEndian>(v as u32)?;
    }
    out.write_u64::<LittleEndian>(cfg.seed)?;
    out.write_f64::<LittleEndian>(cfg.gamma)?;
    let tensors = params.tensors();
    out.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for (name, t) in tensors {
        out.write_u32::<LittleEndian>(name.len() as u32)?;
        out.write_all(name.as_bytes())?;
        out.write_u32::<LittleEndian>(t.shape().len() as u32)?;
        for d in t.shape() {
            out.write_u32::<LittleEndian>(*d as u32)?;
        }
        for v in t.data() {
            out.write_f32::<LittleEndian>(v.as_f32())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(
    input: &mut R,
) -> Result<(ModelParams<T>, ModelConfig), ModelError> {
    let mut magic = [0u8; 5];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let mut dims = [0usize; 7];
    for d in dims.iter_mut() {
        *d = input.read_u32::<LittleEndian>()? as usize;
    }
    let cfg = ModelConfig {
        height: dims[0],
        width: dims[1],
        patch: dims[2],
        channels: dims[3],
        layers: dims[4],
        heads: dims[5],
        mlp_hidden: dims[6],
        seed: input.read_u64::<LittleEndian>()?,
        gamma: input.read_f64::<LittleEndian>()?,
    };
    let mut params = ModelParams::<T>::zeros(&cfg)?;
    let count = input.read_u32::<LittleEndian>()? as usize;
    let mut slots = params.tensors_mut();
    if count != slots.len() {
        return Err(ModelError::Checkpoint(format!(
            "{count} tensors stored, config implies {}",
            slots.len()
        )));
    }
    for (expected, slot) in slots.iter_mut() {
        let len = input.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| ModelError::Checkpoint("tensor name not utf-8".into()))?;
        if &name != expected {
            return Err(ModelError::Checkpoint(format!(
                "expected tensor {expected}, found {name}"
            )));
        }
        let rank = input.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(input.read_u32::<LittleEndian>()? as usize);
        }
        if shape != slot.shape() {
            return Err(ModelError::Checkpoint(format!(
                "{name}: stored shape {shape:?}, expected {:?}",
                slot.shape()
            )));
        }
        let mut data = Vec::with_capacity(slot.len());
        for _ in 0..slot.len() {
            data.push(T::of(input.read_f32::<LittleEndian>()? as f64));
        }
        **slot = Tensor::from_vec(&shape, data).expect("shape checked");
    }
    drop(slots);
    Ok((params, cfg))
}

pub fn save_checkpoint<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    path: &Path,
) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(params, cfg, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(
    path: &Path,
) -> Result<(ModelParams<T>, ModelConfig), ModelError> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
