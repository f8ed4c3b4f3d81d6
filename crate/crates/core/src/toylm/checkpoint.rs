//! `DSKDMODL` checkpoint files.
//!
//! Layout (little-endian): magic, u16 version, the seven [`ModelConfig`]
//! fields (u32 each, seed u64), u32 tensor count, then per tensor a u32 name
//! length, the UTF-8 name, u32 rank, u32 dims and the values as f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{ModelConfig, ToyDecoder};
use super::tensor::{Matrix, Scalar};
use crate::error::{Error, Result};
use crate::io::{read_bytes, read_f32s, read_u16, read_u32, read_u64, write_f32s};

pub const MAGIC: &[u8; 8] = b"DSKDMODL";
pub const VERSION: u16 = 1;

pub fn write_checkpoint<S: Scalar, W: Write>(model: &ToyDecoder<S>, mut w: W) -> Result<()> {
    let c = model.config();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [
        c.num_layers,
        c.hidden_dim,
        c.num_heads,
        c.ffn_dim,
        c.vocab_size,
        c.max_seq_len,
    ] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&c.seed.to_le_bytes())?;
    w.write_all(&(model.params().len() as u32).to_le_bytes())?;
    for p in model.params() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(p.value.rows() as u32).to_le_bytes())?;
        w.write_all(&(p.value.cols() as u32).to_le_bytes())?;
        let values: Vec<f32> = p.value.data().iter().map(|v| v.to_f32_lossy()).collect();
        write_f32s(&mut w, &values)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<S: Scalar, R: Read>(mut r: R) -> Result<ToyDecoder<S>> {
    let magic = read_bytes(&mut r, 8)?;
    if magic != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = read_u16(&mut r)?;
    if version != VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = read_u32(&mut r)? as usize;
    }
    let config = ModelConfig {
        num_layers: dims[0],
        hidden_dim: dims[1],
        num_heads: dims[2],
        ffn_dim: dims[3],
        vocab_size: dims[4],
        max_seq_len: dims[5],
        seed: read_u64(&mut r)?,
    };
    config.validate()?;
    let count = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let name = String::from_utf8(read_bytes(&mut r, name_len)?)
            .map_err(|_| Error::format("checkpoint", "tensor name is not UTF-8"))?;
        let rank = read_u32(&mut r)? as usize;
        let shape: Vec<usize> = (0..rank)
            .map(|_| read_u32(&mut r).map(|v| v as usize))
            .collect::<Result<_>>()?;
        let (rows, cols) = match shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => return Err(Error::format("checkpoint", format!("unsupported rank {rank}"))),
        };
        let values = read_f32s(&mut r, rows * cols)?;
        let data = values.into_iter().map(S::from_f32_lossy).collect();
        tensors.push((name, Matrix::from_vec(rows, cols, data)));
    }
    ToyDecoder::from_params(config, tensors)
}

pub fn save_checkpoint<S: Scalar>(model: &ToyDecoder<S>, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<ToyDecoder<S>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
