//! Checkpoint container: a versioned binary file holding the canonical
//! configuration text (with its own SHA-256 fingerprint) and named f64
//! tensors (parameters, optimizer moments, progress counters), sealed with a
//! SHA-256 digest over everything before the trailer. Sections are written
//! in sorted name order, so identical bundles produce identical bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FGCP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointBundle {
    /// Canonical run-configuration text, exactly as `RunConfig::canonical_text`.
    pub config_text: String,
    pub sections: BTreeMap<String, ArrayD<f64>>,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn save_checkpoint(bundle: &CheckpointBundle, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(
        &mut buf,
        u32::try_from(bundle.config_text.len())
            .map_err(|_| Error::Checkpoint("config text too large".into()))?,
    );
    buf.extend_from_slice(bundle.config_text.as_bytes());
    buf.extend_from_slice(&Sha256::digest(bundle.config_text.as_bytes()));
    put_u32(
        &mut buf,
        u32::try_from(bundle.sections.len())
            .map_err(|_| Error::Checkpoint("too many sections".into()))?,
    );
    for (name, arr) in &bundle.sections {
        put_u32(
            &mut buf,
            u32::try_from(name.len()).map_err(|_| Error::Checkpoint("section name too long".into()))?,
        );
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, arr.ndim() as u32);
        for &d in arr.shape() {
            put_u64(&mut buf, d as u64);
        }
        // Standard layout so bytes mean row-major order regardless of how
        // the array was produced.
        for &v in arr.as_standard_layout().iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    f.write_all(&digest)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("file truncated mid-record".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointBundle> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(Error::Checkpoint("file too short to be a checkpoint".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if &body[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic: not a checkpoint file".into()));
    }
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(Error::Checkpoint("digest mismatch: file corrupted or truncated".into()));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let config_len = r.u32()? as usize;
    let config_text = String::from_utf8(r.take(config_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?;
    let config_digest = r.take(32)?;
    if Sha256::digest(config_text.as_bytes()).as_slice() != config_digest {
        return Err(Error::Checkpoint("embedded config digest mismatch".into()));
    }
    let n_sections = r.u32()? as usize;
    let mut sections = BTreeMap::new();
    for _ in 0..n_sections {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("section name is not UTF-8".into()))?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), data)
            .map_err(|e| Error::Checkpoint(format!("section '{name}': {e}")))?;
        if sections.insert(name.clone(), arr).is_some() {
            return Err(Error::Checkpoint(format!("section '{name}' appears twice")));
        }
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after the last section".into()));
    }
    Ok(CheckpointBundle { config_text, sections })
}
