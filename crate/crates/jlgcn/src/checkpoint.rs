//! Versioned binary checkpoint container: config echo, named parameter
//! tensors with explicit shape headers, and the RNG position. All fields
//! are little-endian; writing is deterministic, so save -> load -> save
//! produces byte-identical files.

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Dtype, Scalar};
use std::path::Path;

const MAGIC: &[u8; 8] = b"JLGCNCKP";
const VERSION: u32 = 1;

#[derive(Debug)]
pub struct Checkpoint<S: Scalar> {
    pub config_json: String,
    pub rng_seed: u64,
    pub rng_draws: u64,
    pub tensors: Vec<(String, DenseMatrix<S>)>,
}

pub fn save<S: Scalar>(ckpt: &Checkpoint<S>, path: &Path) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(S::DTYPE.tag());
    out.extend_from_slice(&ckpt.rng_seed.to_le_bytes());
    out.extend_from_slice(&ckpt.rng_draws.to_le_bytes());
    let cfg = ckpt.config_json.as_bytes();
    out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    out.extend_from_slice(cfg);
    out.extend_from_slice(&(ckpt.tensors.len() as u64).to_le_bytes());
    for (name, tensor) in &ckpt.tensors {
        let nb = name.as_bytes();
        out.extend_from_slice(&(nb.len() as u64).to_le_bytes());
        out.extend_from_slice(nb);
        out.extend_from_slice(&(tensor.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(tensor.cols() as u64).to_le_bytes());
        for &v in tensor.data() {
            v.write_le(&mut out);
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn load<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let dtype = r.take(1)?[0];
    if dtype != S::DTYPE.tag() {
        return Err(Error::Checkpoint(format!(
            "dtype tag {dtype} does not match requested precision ({} bytes)",
            S::DTYPE.byte_width()
        )));
    }
    let rng_seed = r.u64()?;
    let rng_draws = r.u64()?;
    let cfg_len = r.u64()? as usize;
    let config_json = String::from_utf8(r.take(cfg_len)?.to_vec())
        .map_err(|e| Error::Checkpoint(format!("config is not utf-8: {e}")))?;
    let count = r.u64()? as usize;
    let width = S::DTYPE.byte_width();
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u64()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|e| Error::Checkpoint(format!("tensor name is not utf-8: {e}")))?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let total = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint(format!("absurd shape {rows}x{cols}")))?;
        let bytes = r.take(total * width)?;
        let mut data = Vec::with_capacity(total);
        for i in 0..total {
            data.push(S::read_le(&bytes[i * width..]));
        }
        let tensor = DenseMatrix::from_vec(rows, cols, data)
            .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        tensors.push((name, tensor));
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        config_json,
        rng_seed,
        rng_draws,
        tensors,
    })
}

/// Dtype recorded in a checkpoint without committing to a precision.
pub fn peek_dtype(path: &Path) -> Result<Dtype> {
    let buf = std::fs::read(path)?;
    if buf.len() < 13 || &buf[..8] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    match buf[12] {
        4 => Ok(Dtype::F32),
        8 => Ok(Dtype::F64),
        other => Err(Error::Checkpoint(format!("unknown dtype tag {other}"))),
    }
}
