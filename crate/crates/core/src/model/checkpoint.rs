use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{check_schema, ModelConfig};
use super::params::{ParamEntry, ParamSet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TLCKPT\0\0";
const VERSION: u32 = 1;

/// Parameters plus the model config and the seeds that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub seeds: BTreeMap<String, u64>,
    pub params: ParamSet,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    seeds: BTreeMap<String, u64>,
}

fn put(b: &mut Vec<u8>, v: u64) {
    b.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_checkpoint(c: &Checkpoint) -> Result<Vec<u8>> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    let meta = serde_json::to_vec(&Meta {
        config: c.config.clone(),
        seeds: c.seeds.clone(),
    })
    .map_err(|e| Error::Format(e.to_string()))?;
    put(&mut b, meta.len() as u64);
    b.extend_from_slice(&meta);
    put(&mut b, c.params.len() as u64);
    for e in c.params.entries() {
        put(&mut b, e.name.len() as u64);
        b.extend_from_slice(e.name.as_bytes());
        b.push(e.prunable as u8);
        put(&mut b, e.shape.len() as u64);
        for d in &e.shape {
            put(&mut b, *d as u64);
        }
        for v in &e.values {
            b.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    let sum = Sha256::digest(&b);
    b.extend_from_slice(&sum);
    Ok(b)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        if v > self.buf.len() as u64 {
            return Err(Error::Format(format!("implausible length {v} in checkpoint")));
        }
        Ok(v as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 + 4 + 32 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::Format(
            "checkpoint checksum mismatch (truncated or corrupt)".into(),
        ));
    }
    let mut r = Cursor { buf: body, pos: 8 };
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mlen = r.len()?;
    let meta: Meta = serde_json::from_slice(r.take(mlen)?).map_err(|e| Error::Format(e.to_string()))?;
    let count = r.len()?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = r.len()?;
        let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
        let prunable = r.take(1)?[0] != 0;
        let ndim = r.len()?;
        let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let values = (0..n)
            .map(|_| r.u64().map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        entries.push(ParamEntry::new(name, shape, values, prunable)?);
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    let params = ParamSet::new(entries)?;
    check_schema(&meta.config, &params)
        .map_err(|e| Error::Format(format!("checkpoint inconsistent with its config: {e}")))?;
    Ok(Checkpoint {
        config: meta.config,
        seeds: meta.seeds,
        params,
    })
}

pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(c)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
