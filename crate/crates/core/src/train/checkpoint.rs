//! Binary checkpoint: `"HIMO"`, version (u32), config text (u32 length +
//! bytes), tensor count (u32), then per tensor name (u32 length + bytes),
//! dtype (u8), rank (u32), extents (u64 each) and a little-endian payload.
//! A CRC32 of every preceding byte closes the file. All integers are
//! little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::{dtype_width, Real};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"HIMO";

fn decode<T: Real>(b: &[u8]) -> Vec<T> {
    b.chunks_exact(dtype_width(T::DTYPE).unwrap_or(8)).map(T::from_le_slice).collect()
}

/// One stored tensor, kept as raw payload bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: u8,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

impl TensorEntry {
    pub fn from_tensor<T: Real>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let mut payload = Vec::with_capacity(t.numel() * dtype_width(T::DTYPE).unwrap_or(8));
        t.data().iter().for_each(|&v| T::to_le_bytes_vec(v, &mut payload));
        TensorEntry { name: name.into(), dtype: T::DTYPE, shape: t.shape().to_vec(), payload }
    }

    /// Decodes the payload, converting between f32 and f64 if needed.
    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        let data = match self.dtype {
            d if d == T::DTYPE => decode::<T>(&self.payload),
            1 => decode::<f32>(&self.payload).into_iter().map(|v| T::from_f64c(v as f64)).collect(),
            2 => decode::<f64>(&self.payload).into_iter().map(T::from_f64c).collect(),
            d => return Err(Error::Checkpoint(format!("tensor `{}` has unknown dtype {}", self.name, d))),
        };
        Tensor::new(&self.shape, data)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Checkpoint {
    pub config_text: String,
    pub tensors: Vec<TensorEntry>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{} does not fit in u32", v)))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_u32(&mut out, self.config_text.len())?;
        out.extend_from_slice(self.config_text.as_bytes());
        put_u32(&mut out, self.tensors.len())?;
        for t in &self.tensors {
            put_u32(&mut out, t.name.len())?;
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dtype);
            put_u32(&mut out, t.shape.len())?;
            for &e in &t.shape {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            out.extend_from_slice(&t.payload);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    fn parse_body(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 8 };
        let config_text = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let dtype = r.take(1)?[0];
            let width = dtype_width(dtype)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` has unknown dtype {}", name, dtype)))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
            let len = numel.and_then(|n| n.checked_mul(width));
            let len = len.ok_or_else(|| Error::Checkpoint(format!("tensor `{}` is too large", name)))?;
            let payload = r.take(len)?.to_vec();
            tensors.push(TensorEntry { name, dtype, shape, payload });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} unexpected trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { config_text, tensors })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        if bytes.len() < 12 {
            return Err(Error::Checkpoint("file is truncated".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (this build reads {})",
                version, CHECKPOINT_VERSION
            )));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            // A short file usually fails the checksum too; name the real cause.
            if let Err(e @ Error::Checkpoint(_)) = Self::parse_body(body) {
                if e.to_string().contains("truncated") {
                    return Err(e);
                }
            }
            return Err(Error::Checkpoint(format!(
                "CRC mismatch (stored {:08x}, computed {:08x})",
                stored,
                crc32fast::hash(body)
            )));
        }
        Self::parse_body(body)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {}", path.display(), e)))
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }
}
