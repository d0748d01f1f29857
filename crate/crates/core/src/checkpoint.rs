//! `SFMD` model checkpoints.
//!
//! Layout (little-endian): magic `SFMD`, u32 version, u32 header length, the
//! header as canonical JSON (config and token map), u32 tensor count, then per
//! tensor: u32 name length, name bytes, u32 rank, rank × u32 dims, and the
//! elements as f32.

use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::tokenizer::Tokenizer;

pub const SFMD_MAGIC: &[u8; 4] = b"SFMD";
pub const SFMD_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tokenizer: Tokenizer,
}

pub fn write_checkpoint<W: Write>(state: &ModelState, mut w: W) -> Result<()> {
    w.write_all(SFMD_MAGIC)?;
    w.write_all(&SFMD_VERSION.to_le_bytes())?;
    let header = serde_json::to_vec(&Header {
        config: state.config().clone(),
        tokenizer: state.tokenizer().clone(),
    })?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    let tensors: Vec<_> = state.tensors().collect();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, shape, data) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &x in data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelState> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SFMD_MAGIC {
        return Err(Error::Format("not an SFMD checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != SFMD_VERSION {
        return Err(Error::Format(format!("unsupported SFMD version {version}")));
    }
    let header_len = read_u32(&mut r)? as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    let layout = crate::config::Layout::new(&header.config);
    let count = read_u32(&mut r)? as usize;
    if count != layout.tensors.len() {
        return Err(Error::Format(format!(
            "expected {} tensors, found {count}",
            layout.tensors.len()
        )));
    }
    let mut params = Vec::with_capacity(layout.total);
    for spec in &layout.tensors {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if name != spec.name.as_bytes() || shape != spec.shape {
            return Err(Error::Format(format!(
                "tensor {:?} {:?} does not match expected {} {:?}",
                String::from_utf8_lossy(&name),
                shape,
                spec.name,
                spec.shape
            )));
        }
        for _ in 0..spec.slot.len {
            params.push(f32::from_le_bytes(read_u32(&mut r)?.to_le_bytes()));
        }
    }
    ModelState::from_parts(header.config, header.tokenizer, params)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn save(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let mut w = io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(state, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelState> {
    read_checkpoint(io::BufReader::new(std::fs::File::open(path)?))
}
