//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! b"VRDN" | version: u16 | config_len: u32 | config: UTF-8 `key=value\n` lines
//! then per parameter until EOF:
//!   name_len: u32 | name: UTF-8 | rank: u32 | dims: u32 × rank | data: f32 × prod(dims)
//! ```

use std::collections::BTreeMap;

use super::{EncoderConfig, EncoderError, ModelParameters};
use crate::tensor_core::Tensor;

pub const MAGIC: &[u8; 4] = b"VRDN";
pub const VERSION: u16 = 1;
const VOCAB_HASH_KEY: &str = "vocab_hash";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

pub fn save_checkpoint(model: &ModelParameters<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());

    let mut block = String::new();
    for (k, v) in model.config.to_pairs() {
        block.push_str(&format!("{k}={v}\n"));
    }
    if let Some(hash) = &model.vocab_hash {
        block.push_str(&format!("{VOCAB_HASH_KEY}={hash}\n"));
    }
    put_u32(&mut out, block.len());
    out.extend_from_slice(block.as_bytes());

    for (name, tensor) in &model.params {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, tensor.rank());
        for &d in tensor.shape() {
            put_u32(&mut out, d);
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EncoderError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt("unexpected end of data"))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<usize, EncoderError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn utf8(&mut self, n: usize) -> Result<&'a str, EncoderError> {
        std::str::from_utf8(self.take(n)?).map_err(|_| corrupt("invalid UTF-8"))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn corrupt(msg: &str) -> EncoderError {
    EncoderError::CorruptCheckpoint(msg.to_string())
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<ModelParameters<f32>, EncoderError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4).map_err(|_| corrupt("missing magic"))? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = cur.take(2)?;
    if u16::from_le_bytes([version[0], version[1]]) != VERSION {
        return Err(corrupt("unsupported version"));
    }
    let block_len = cur.u32()?;
    let block = cur.utf8(block_len)?;
    let mut pairs = BTreeMap::new();
    for line in block.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| corrupt("bad config line"))?;
        pairs.insert(k.to_string(), v.to_string());
    }
    let vocab_hash = pairs.remove(VOCAB_HASH_KEY);
    let config = EncoderConfig::from_pairs(&pairs).map_err(|e| corrupt(&e.to_string()))?;

    let mut params = BTreeMap::new();
    while !cur.at_end() {
        let name_len = cur.u32()?;
        let name = cur.utf8(name_len)?.to_string();
        let rank = cur.u32()?;
        if rank > 8 {
            return Err(corrupt("implausible rank"));
        }
        let shape = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| corrupt("shape overflow"))?;
        let raw = cur.take(count.checked_mul(4).ok_or_else(|| corrupt("shape overflow"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| corrupt(&e.to_string()))?;
        if params.insert(name.clone(), tensor).is_some() {
            return Err(corrupt(&format!("duplicate parameter {name}")));
        }
    }
    let model = ModelParameters {
        config,
        params,
        vocab_hash,
    };
    model.check_inventory()?;
    Ok(model)
}
