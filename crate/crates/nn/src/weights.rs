//! `CSIW` weight files.
//!
//! Layout, little endian: magic `CSIW`, u16 version, u32-length-prefixed label,
//! u32-length-prefixed model spec text, u64 count + f32 parameters, u64 count +
//! f32 batch-norm running statistics, then a CRC-32 of all preceding bytes.

use std::path::Path;

use crate::error::{NnError, Result};
use crate::model::Model;
use crate::params::ParamStore;
use crate::spec::ModelSpec;

pub const MAGIC: &[u8; 4] = b"CSIW";
pub const VERSION: u16 = 1;

pub fn encode_weights(label: &str, model: &Model<f32>) -> Vec<u8> {
    let spec_text = model.spec().to_string();
    let params = model.params().values();
    let running = model.running_stats();
    let mut out = Vec::with_capacity(64 + spec_text.len() + 4 * (params.len() + running.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for text in [label, spec_text.as_str()] {
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
    }
    for block in [params, running] {
        out.extend_from_slice(&(block.len() as u64).to_le_bytes());
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::Weights("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn text(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| NnError::Weights("text block is not UTF-8".into()))
    }

    fn floats(&mut self) -> Result<Vec<f32>> {
        let n = usize::try_from(self.u64()?).map_err(|_| NnError::Weights("block too large".into()))?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| NnError::Weights("block too large".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Returns the stored label and the reconstructed model.
pub fn decode_weights(bytes: &[u8]) -> Result<(String, Model<f32>)> {
    if bytes.len() < 4 + 2 + 4 || &bytes[..4] != MAGIC {
        return Err(NnError::Weights("bad magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(NnError::Weights("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u16()?;
    if version != VERSION {
        return Err(NnError::Weights(format!("unsupported version {version}")));
    }
    let label = r.text()?;
    let spec: ModelSpec = r.text()?.parse()?;
    let params = r.floats()?;
    let running = r.floats()?;
    if r.pos != body.len() {
        return Err(NnError::Weights("trailing bytes".into()));
    }
    let store = ParamStore::from_values(&spec, params)?;
    let model = Model::from_parts(spec, store, Some(running))?;
    Ok((label, model))
}

pub fn save_weights(path: impl AsRef<Path>, label: &str, model: &Model<f32>) -> Result<()> {
    std::fs::write(path, encode_weights(label, model))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(String, Model<f32>)> {
    decode_weights(&std::fs::read(path)?)
}
