//! Binary tensor container for network weights and run metadata.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DGCK" | version: u32 | record*
//! record = name_len: u32 | name: UTF-8 | rank: u32 | extent: u64 * rank
//!          | value: f64 * prod(extents)
//! ```
//!
//! Records run until end of file. Values are raw f64 bits, so a save/load
//! round trip is bit-exact. Scalars (rank 0) carry one value; the training
//! code uses them for run metadata under `meta.`-prefixed names.

use crate::error::{Error, Result};
use crate::Tensor;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"DGCK";
pub const VERSION: u32 = 1;

/// Ranks above this are rejected as corruption rather than honored.
const MAX_RANK: u32 = 8;

pub fn save(path: &Path, entries: &[(&str, &Tensor)]) -> Result<()> {
    let mut seen = HashSet::new();
    for (name, _) in entries {
        if !seen.insert(*name) {
            return Err(Error::Config(format!("duplicate checkpoint entry {name}")));
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(&MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes()).map_err(io)?;
        for &e in &t.shape {
            w.write_all(&(e as u64).to_le_bytes()).map_err(io)?;
        }
        for &v in &t.values {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Convenience for rank-0 metadata records.
pub fn scalar_entry(v: f64) -> Tensor {
    Tensor { shape: vec![], values: vec![v], grad: vec![0.0], node_id: None, requires_grad: false }
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };

    if cur.take(4)? != MAGIC {
        return Err(Error::parse(path, "not a DGCK checkpoint"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::parse(path, format!("unsupported checkpoint version {version}")));
    }

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    while !cur.done() {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::parse(path, "record name is not UTF-8"))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::parse(path, format!("duplicate record {name}")));
        }
        let rank = cur.u32()?;
        if rank > MAX_RANK {
            return Err(Error::parse(path, format!("record {name} claims rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let e = cur.u64()?;
            numel = numel
                .checked_mul(e)
                .ok_or_else(|| Error::parse(path, format!("extent overflow in {name}")))?;
            shape.push(e as usize);
        }
        if numel > (bytes.len() as u64) / 8 + 1 {
            return Err(Error::parse(path, format!("record {name} overruns the file")));
        }
        let mut values = Vec::with_capacity(numel as usize);
        for _ in 0..numel {
            values.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
        }
        let n = values.len();
        entries.push((
            name,
            Tensor { shape, values, grad: vec![0.0; n], node_id: None, requires_grad: false },
        ));
    }
    Ok(entries)
}

/// First entry with the given name, if present.
pub fn find<'a>(entries: &'a [(String, Tensor)], name: &str) -> Option<&'a Tensor> {
    entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
}

/// Scalar metadata value, if present and rank 0.
pub fn find_scalar(entries: &[(String, Tensor)], name: &str) -> Option<f64> {
    find(entries, name).filter(|t| t.shape.is_empty()).map(|t| t.values[0])
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
