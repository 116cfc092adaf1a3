use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Mask, MaskEntry, OverlapReport, Provenance};
use crate::error::{Error, Result};
use crate::model::ParamSet;

const MAGIC: &[u8; 8] = b"TLMASK\0\0";
const VERSION: u32 = 1;

/// Serialize `mask`: header, packed entries and a trailing SHA-256 of everything before it.
pub fn write_mask(mask: &Mask) -> Result<Vec<u8>> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.extend_from_slice(&mask.schema_digest());
    b.extend_from_slice(&mask.target_sparsity.to_bits().to_le_bytes());
    let prov = serde_json::to_vec(&mask.provenance).map_err(|e| Error::Format(e.to_string()))?;
    b.extend_from_slice(&(prov.len() as u64).to_le_bytes());
    b.extend_from_slice(&prov);
    b.extend_from_slice(&(mask.entries().len() as u64).to_le_bytes());
    for e in mask.entries() {
        b.extend_from_slice(&(e.name.len() as u64).to_le_bytes());
        b.extend_from_slice(e.name.as_bytes());
        b.extend_from_slice(&(e.shape.len() as u64).to_le_bytes());
        for d in &e.shape {
            b.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for w in e.words() {
            b.extend_from_slice(&w.to_le_bytes());
        }
    }
    let sum = Sha256::digest(&b);
    b.extend_from_slice(&sum);
    Ok(b)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("mask file truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        if v > self.buf.len() as u64 * 64 {
            return Err(Error::Format(format!("implausible length {v} in mask file")));
        }
        Ok(v as usize)
    }
}

/// Parse a mask; when `schema` is given the mask must match its prunable entries.
pub fn read_mask(bytes: &[u8], schema: Option<&ParamSet>) -> Result<Mask> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a mask file".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::Format(
            "mask file checksum mismatch (truncated or corrupt)".into(),
        ));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported mask file version {version}")));
    }
    let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
    if let Some(p) = schema {
        if p.schema_digest() != digest {
            return Err(Error::Incompatible(
                "mask was saved for a different parameter schema".into(),
            ));
        }
    }
    let target = f64::from_bits(r.u64()?);
    let plen = r.len()?;
    let provenance: Provenance = serde_json::from_slice(r.take(plen)?).map_err(|e| Error::Format(e.to_string()))?;
    let count = r.len()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let nlen = r.len()?;
        let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
        let ndim = r.len()?;
        let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let words = shape.iter().product::<usize>().div_ceil(64);
        let bits = (0..words).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        entries.push(MaskEntry::from_words(name, shape, bits)?);
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes in mask file".into()));
    }
    let mask = Mask::from_entries(entries, target, provenance);
    if mask.schema_digest() != digest {
        return Err(Error::Format("mask header digest does not match its entries".into()));
    }
    Ok(mask)
}

pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    fs::write(path, write_mask(mask)?)?;
    Ok(())
}

pub fn load_mask(path: &Path, schema: Option<&ParamSet>) -> Result<Mask> {
    read_mask(&fs::read(path)?, schema)
}

/// CSV rows `(pair, layer, jaccard)`; the global value uses layer `all`.
pub fn write_overlap_csv(reports: &[OverlapReport], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["pair", "layer", "jaccard"]).map_err(fmt)?;
    for r in reports {
        let pair = format!("{}|{}", r.first, r.second);
        w.write_record([pair.as_str(), "all", &r.global_jaccard.to_string()])
            .map_err(fmt)?;
        for l in &r.per_layer {
            w.write_record([pair.as_str(), &l.layer, &l.jaccard.to_string()])
                .map_err(fmt)?;
        }
    }
    w.flush()?;
    Ok(())
}
